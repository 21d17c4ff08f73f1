"""The three experiment pipelines and their result tables.

``geometry``
    Transfer risk of the distilled student on κ-polynomial tasks of
    increasing alignment.
``bias``
    Transfer risk of the biased global minimisers ``w_δ`` on the 0/1
    MNIST task, or on a synthetic stand-in.
``monotonicity``
    Monotonicity index against transfer risk across a learner roster.

Every random stream is derived from the master seed, a purpose label
and the trial index (see :mod:`lindistill.seeding`), so tables do not
depend on the thread count or on the order trials run in.
"""

import concurrent.futures
import dataclasses
import logging
import os
import typing

import numpy as np
import pandas
import scipy.stats

import lindistill.distill
import lindistill.error
import lindistill.geometry
import lindistill.risk
import lindistill.seeding
import lindistill.tasks
import lindistill.trainers

logger = logging.getLogger(__name__)

EXPERIMENTS = ("geometry", "bias", "monotonicity")

#: Learners of the monotonicity roster, in table order.
ROSTER = ("distillation", "hard-target", "w_delta")

#: Descent settings the experiments train students with.
EXPERIMENT_TRAINER = lindistill.trainers.ShallowConfig(
    step="auto", max_iters=10**6, loss_tol=1e-12, grad_tol=1e-12)

_DEFAULTS = {
    "geometry": {"d": 1000, "n": 20, "trials": 50, "deltas": ()},
    "bias": {"d": 784, "n": 100, "trials": 50,
             "deltas": tuple(float(delta) for delta in range(0, 100, 10))},
    "monotonicity": {"d": 100, "n": 5, "trials": 1000,
                     "deltas": (1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0)},
}


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment run.

    Fields left as ``None`` take the experiment's defaults on
    construction, so an instance always holds the complete settings.

    :param kappas: κ roster of the geometry experiment.
    :param kappa: κ of the single task of the other experiments.
    :param deltas: δ roster of the bias and monotonicity experiments.
    :param mc_samples: Held-out draws per risk estimate on synthetic
        tasks; MNIST risks use the whole test split.
    :param synthetic_fallback: Let the bias experiment run on a κ = 1
        task of dimension ``d`` when no MNIST files are found.
    """

    experiment: str
    seed: int = 0
    kappas: typing.Tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    kappa: float = 1.0
    d: typing.Optional[int] = None
    n: typing.Optional[int] = None
    trials: typing.Optional[int] = None
    deltas: typing.Optional[typing.Tuple[float, ...]] = None
    mc_samples: int = 100_000
    learners: typing.Tuple[str, ...] = ROSTER
    trainer: lindistill.trainers.ShallowConfig = EXPERIMENT_TRAINER
    teacher: lindistill.tasks.TeacherConfig = \
        lindistill.tasks.TeacherConfig()
    mnist_dir: typing.Optional[str] = None
    synthetic_fallback: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise lindistill.error.ContractError(
                f"unknown experiment {self.experiment!r}; expected one of "
                f"{', '.join(EXPERIMENTS)}", field="experiment")
        for name, value in _DEFAULTS[self.experiment].items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        object.__setattr__(self, "kappas", tuple(map(float, self.kappas)))
        object.__setattr__(self, "deltas", tuple(map(float, self.deltas)))
        object.__setattr__(self, "learners", tuple(self.learners))
        for name in ("d", "n", "trials", "mc_samples", "threads"):
            if getattr(self, name) < 1:
                raise lindistill.error.ContractError(
                    "must be at least 1", field=name)
        if self.experiment == "geometry" and not self.kappas:
            raise lindistill.error.ContractError(
                "needs at least one κ", field="kappas")
        if min(self.kappas, default=0) < 0 or self.kappa < 0:
            raise lindistill.error.ContractError(
                "κ must be non-negative", field="kappas")
        unknown = set(self.learners) - set(ROSTER)
        if unknown:
            raise lindistill.error.ContractError(
                f"unknown learners {sorted(unknown)}", field="learners")
        if self.seed < 0:
            raise lindistill.error.ContractError(
                "must be non-negative", field="seed")


@dataclasses.dataclass(frozen=True)
class Schema:
    """Column layout of one experiment's table.

    :param keys: Columns the rows are sorted by.
    :param param: Column summaries are grouped by.
    """

    columns: typing.Tuple[str, ...]
    keys: typing.Tuple[str, ...]
    param: typing.Tuple[str, ...]


SCHEMAS = {
    "geometry": Schema(
        columns=("experiment", "kappa", "trial", "risk", "half_width",
                 "train_loss", "angle"),
        keys=("kappa", "trial"),
        param=("kappa",),
    ),
    "bias": Schema(
        columns=("experiment", "delta", "trial", "risk", "half_width",
                 "train_loss", "angle"),
        keys=("delta", "trial"),
        param=("delta",),
    ),
    "monotonicity": Schema(
        columns=("experiment", "slot", "learner", "delta", "trial", "risk",
                 "half_width", "improved", "angle"),
        keys=("slot", "trial"),
        param=("slot", "learner", "delta"),
    ),
}


class ResultTable:
    """Per-trial results of one experiment.

    Rows are sorted by the schema's keys. Failed trials have no row;
    their counts per parameter value live in :attr:`failures`.
    """

    def __init__(self, experiment, frame, *, failures=None, metrics=None):
        if experiment not in SCHEMAS:
            raise lindistill.error.UsageError(
                f"no table schema for {experiment!r}")
        schema = SCHEMAS[experiment]
        if tuple(frame.columns) != schema.columns:
            raise lindistill.error.FormatError(
                f"{experiment} table has columns {list(frame.columns)}, "
                f"expected {list(schema.columns)}")
        risk = frame["risk"].to_numpy(dtype=float)
        if np.any((risk < 0) | (risk > 1)):
            raise lindistill.error.FormatError("risk outside [0, 1]")
        self.experiment = experiment
        self.schema = schema
        self.frame = frame.sort_values(
            list(schema.keys), kind="mergesort").reset_index(drop=True)
        self.failures = dict(failures or {})
        self.metrics = dict(metrics or {})

    def __repr__(self):
        return (f"<{self.__class__.__name__} '{self.experiment}' "
                f"{len(self.frame)} rows>")

    def __len__(self):
        return len(self.frame)

    @classmethod
    def from_rows(cls, experiment, rows, **kwargs):
        frame = pandas.DataFrame(
            [dict(row, experiment=experiment) for row in rows],
            columns=list(SCHEMAS[experiment].columns))
        return cls(experiment, frame, **kwargs)

    def to_csv(self, path):
        self.frame.to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def from_csv(cls, path):
        frame = pandas.read_csv(path, float_precision="round_trip")
        if frame.empty or "experiment" not in frame:
            raise lindistill.error.FormatError(f"{path} holds no result rows")
        return cls(str(frame["experiment"].iloc[0]), frame)

    @property
    def total_failures(self):
        return sum(self.failures.values())

    def summary(self):
        """Mean risk per parameter value with a 95% half-width of the mean.

        Monotonicity tables also carry the index, the fraction of
        trials in which the extra input strictly reduced the angle.
        """
        grouped = self.frame.groupby(
            list(self.schema.param), sort=False, dropna=False)
        summary = grouped["risk"].agg(["mean", "std", "count"]).reset_index()
        summary = summary.rename(columns={"mean": "mean_risk"})
        summary["half_width"] = _mean_half_width(
            summary.pop("std"), summary["count"])
        if "improved" in self.frame:
            index = grouped["improved"].mean().to_numpy()
            summary["index"] = index
            summary["index_half_width"] = lindistill.risk.Z95 * np.sqrt(
                index * (1 - index) / summary["count"].to_numpy())
        return summary


def _mean_half_width(std, count):
    std = std.fillna(0.0).to_numpy(dtype=float)
    return lindistill.risk.Z95 * std / np.sqrt(count.to_numpy(dtype=float))


def _map_trials(fn, trials, threads):
    """Run ``fn(trial)`` for every trial, results in trial order."""
    if threads == 1:
        return [fn(trial) for trial in range(trials)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


def _guarded(label, fn):
    """Wrap *fn* so learner failures yield ``None`` instead of raising."""

    def run(trial):
        try:
            return fn(trial)
        except lindistill.risk.LEARNER_FAILURES as error:
            logger.warning("%s trial %d failed: %s", label, trial, error)
            return None

    return run


def _angle(w_star, w):
    if not np.any(w):
        return float("nan")
    return lindistill.geometry.unsigned_angle(w_star, w)


def _scored(W, task, cfg, rng):
    if not W:
        return []
    return lindistill.risk.transfer_risk_many(
        np.vstack(W), task.w_star, task, cfg.mc_samples, rng, allow_zero=True)


def exp_data_geometry(cfg):
    """Distilled student risk across κ-polynomial tasks.

    For every κ a task with a random unit teacher is drawn; each trial
    trains the shallow student on its own transfer set of ``n``
    inputs. All students of one κ are scored on one shared held-out
    sample of ``mc_samples`` draws.
    """
    rows = []
    failures = {}
    for index, kappa in enumerate(cfg.kappas):
        logger.info("geometry: κ = %g, %d trials", kappa, cfg.trials)
        task = lindistill.tasks.PolyAngleTask.random(
            kappa, cfg.d,
            lindistill.seeding.derive(cfg.seed, "geometry/task", index))

        def trial(number, task=task, index=index):
            ts = lindistill.tasks.make_transfer_set(
                task, cfg.n, lindistill.seeding.derive(
                    cfg.seed, "geometry/transfer", index, number))
            w, _ = lindistill.trainers.train_shallow(ts, cfg.trainer)
            return number, w, lindistill.distill.loss(w, ts)

        done = [result for result in _map_trials(
            _guarded("geometry", trial), cfg.trials, cfg.threads) if result]
        failures[kappa] = cfg.trials - len(done)
        risks = _scored(
            [w for _, w, _ in done], task, cfg,
            lindistill.seeding.derive(cfg.seed, "geometry/eval", index))
        for (number, w, value), risk in zip(done, risks):
            rows.append({
                "kappa": kappa, "trial": number, "risk": risk.estimate,
                "half_width": risk.half_width, "train_loss": value,
                "angle": _angle(task.w_star, w),
            })
    table = ResultTable.from_rows("geometry", rows, failures=failures)
    return _with_metrics(table, "kappa")


def _bias_task(cfg):
    directory = cfg.mnist_dir or os.environ.get("LINDISTILL_MNIST_DIR")
    try:
        if directory is None:
            raise lindistill.error.MissingDataError(
                list(lindistill.tasks.MNIST_FILES.values()))
        return lindistill.tasks.EmpiricalTask.from_mnist(
            directory, cfg.teacher)
    except lindistill.error.MissingDataError:
        if not cfg.synthetic_fallback:
            raise
        logger.warning("MNIST files not found; using a synthetic κ = %g "
                       "task of dimension %d", cfg.kappa, cfg.d)
        return lindistill.tasks.PolyAngleTask.random(
            cfg.kappa, cfg.d, lindistill.seeding.derive(cfg.seed, "bias/task"))


def exp_optim_bias(cfg):
    """Risk of the global minimisers ``w_δ`` across the δ roster.

    Each trial draws one transfer set, computes the closed-form
    solution and perturbs it off the data span by every δ along one
    shared direction. Risks are measured on the MNIST test split, or
    on a shared Monte Carlo sample for the synthetic stand-in.
    """
    task = _bias_task(cfg)
    empirical = isinstance(task, lindistill.tasks.EmpiricalTask)

    def trial(number):
        ts = lindistill.tasks.make_transfer_set(
            task, cfg.n,
            lindistill.seeding.derive(cfg.seed, "bias/transfer", number))
        w_hat = lindistill.distill.closed_form_solution(ts)
        students = []
        for delta in cfg.deltas:
            rng = lindistill.seeding.derive(cfg.seed, "bias/direction", number)
            w = lindistill.risk.perturbed_learner(w_hat, ts.X, delta, rng)
            students.append((delta, w, lindistill.distill.loss(w, ts)))
        return number, students

    done = [result for result in _map_trials(
        _guarded("bias", trial), cfg.trials, cfg.threads) if result]
    students = [(number, *student)
                for number, trial_students in done
                for student in trial_students]
    W = [w for _, _, w, _ in students]
    if empirical:
        X_eval = task.inputs("eval")
        risks = [lindistill.risk.transfer_risk_on(
            w, task.w_star, X_eval, allow_zero=True) for w in W]
    else:
        risks = _scored(W, task, cfg,
                        lindistill.seeding.derive(cfg.seed, "bias/eval"))
    rows = [
        {"delta": delta, "trial": number, "risk": risk.estimate,
         "half_width": risk.half_width, "train_loss": value,
         "angle": _angle(task.w_star, w)}
        for (number, delta, w, value), risk in zip(students, risks)
    ]
    failed = cfg.trials - len(done)
    table = ResultTable.from_rows(
        "bias", rows, failures={delta: failed for delta in cfg.deltas})
    return _with_metrics(table, "delta")


def roster(cfg):
    """Named learners ``(slot, name, δ, learner)`` of the monotonicity run.

    Each learner maps ``(transfer_set, rng)`` to weights.
    """

    def distillation(ts, rng):
        return lindistill.trainers.train_shallow(ts, cfg.trainer)[0]

    def hard_target(ts, rng):
        return lindistill.trainers.train_hard_target(ts, cfg.trainer)[0]

    def w_delta(delta):
        def learner(ts, rng):
            w_hat = lindistill.distill.closed_form_solution(ts)
            return lindistill.risk.perturbed_learner(w_hat, ts.X, delta, rng)
        return learner

    learners = []
    for name in cfg.learners:
        if name == "distillation":
            learners.append((name, float("nan"), distillation))
        elif name == "hard-target":
            learners.append((name, float("nan"), hard_target))
        else:
            learners.extend(
                (name, delta, w_delta(delta)) for delta in cfg.deltas)
    return [(slot, *learner) for slot, learner in enumerate(learners)]


def exp_monotonicity(cfg):
    """Monotonicity index and transfer risk of every roster learner.

    Every trial draws one pair of transfer sets, ``n`` inputs and the
    same plus one, shared by the whole roster. A learner's risk is that
    of its ``n``-input student on a shared held-out sample; its index is
    the fraction of trials in which the extra input strictly reduced
    the angle to the teacher.
    """
    task = lindistill.tasks.PolyAngleTask.random(
        cfg.kappa, cfg.d,
        lindistill.seeding.derive(cfg.seed, "monotonicity/task"))
    learners = roster(cfg)

    def trial(number):
        minus, plus = lindistill.risk.append_pair(
            task, cfg.n,
            lindistill.seeding.derive(cfg.seed, "monotonicity/data", number))
        results = []
        for slot, name, delta, learner in learners:
            rng = lindistill.seeding.derive(
                cfg.seed, "monotonicity/learner", slot, number)
            try:
                w_minus = learner(minus, rng)
                w_plus = learner(plus, rng)
                improved = lindistill.risk.improves(
                    task.w_star, w_minus, w_plus)
            except lindistill.risk.LEARNER_FAILURES as error:
                logger.warning("%s trial %d failed: %s", name, number, error)
                continue
            results.append((slot, name, delta, number, w_minus, improved))
        return results

    logger.info("monotonicity: %d learners, %d trials",
                len(learners), cfg.trials)
    results = [result
               for trial_results in _map_trials(trial, cfg.trials, cfg.threads)
               for result in trial_results]
    risks = _scored([result[4] for result in results], task, cfg,
                    lindistill.seeding.derive(cfg.seed, "monotonicity/eval"))
    rows = [
        {"slot": slot, "learner": name, "delta": delta, "trial": number,
         "risk": risk.estimate, "half_width": risk.half_width,
         "improved": int(improved), "angle": _angle(task.w_star, w)}
        for (slot, name, delta, number, w, improved), risk
        in zip(results, risks)
    ]
    completed = {}
    for slot, *_ in results:
        completed[slot] = completed.get(slot, 0) + 1
    failures = {slot: cfg.trials - completed.get(slot, 0)
                for slot, *_ in learners}
    table = ResultTable.from_rows("monotonicity", rows, failures=failures)
    summary = table.summary()
    if len(summary) >= 2:
        table.metrics["pearson_index_risk"] = float(scipy.stats.pearsonr(
            summary["index"], summary["mean_risk"])[0])
    return table


def _with_metrics(table, param):
    summary = table.summary()
    if len(summary) >= 2:
        table.metrics[f"spearman_{param}_risk"] = float(scipy.stats.spearmanr(
            summary[param], summary["mean_risk"])[0])
    return table


RUNNERS = {
    "geometry": exp_data_geometry,
    "bias": exp_optim_bias,
    "monotonicity": exp_monotonicity,
}


def run(cfg):
    """Run the experiment *cfg* names."""
    return RUNNERS[cfg.experiment](cfg)
