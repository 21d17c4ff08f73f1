"""Command line interface.

.. code-block:: shell

    $ lindistill train --config run.yaml --out runs/train
    $ lindistill experiment geometry --config run.yaml --plot

Exit codes: 0 on success, 1 when a run fails or a verification check
does not pass, 2 for an invalid configuration or invocation.
"""

import argparse
import dataclasses
import logging
import pathlib
import sys

import numpy as np
import pandas

import lindistill.config
import lindistill.distill
import lindistill.error
import lindistill.experiments
import lindistill.geometry
import lindistill.manifest
import lindistill.plot
import lindistill.risk
import lindistill.seeding
import lindistill.tasks
import lindistill.trainers
import lindistill.verify

logger = logging.getLogger(__name__)

#: Angles the reverse cdf is estimated on when no analytic form exists.
CURVE_GRID = np.linspace(0, np.pi / 2, 91)


def _closed_form(ts):
    try:
        return lindistill.distill.closed_form_solution(ts)
    except lindistill.error.SingularityError as error:
        logger.warning("no closed-form solution: %s", error)
        return None


def _transfer_set(config):
    task = config.task(lindistill.seeding.derive(config.seed, "task"))
    ts = lindistill.tasks.make_transfer_set(
        task, config.n, lindistill.seeding.derive(config.seed, "transfer"))
    return task, ts


def _weights_frame(w):
    return pandas.DataFrame({"w": np.asarray(w, dtype=float)})


def _read_weights(path):
    frame = pandas.read_csv(path, float_precision="round_trip")
    if "w" not in frame:
        raise lindistill.error.FormatError(f"{path} has no 'w' column")
    return frame["w"].to_numpy(dtype=float)


def cmd_train(config, out, arguments):
    """Train the configured student on one transfer set."""
    task, ts = _transfer_set(config)
    w_hat = _closed_form(ts)
    manifest = lindistill.manifest.RunManifest.for_config("train", config)
    if config.depth == 1:
        cfg = config.shallow()
        w, trace = lindistill.trainers.train_shallow(ts, cfg, reference=w_hat)
    else:
        if w_hat is None:
            raise lindistill.error.SingularityError(
                "deep training needs the closed-form solution to set ε")
        cfg = config.deep(np.linalg.norm(w_hat))
        scale, bound = lindistill.trainers.resolve_init_scale(
            cfg, ts, w_hat=w_hat)
        manifest.parameters.update(init_scale=scale, init_scale_bound=bound)
        stack = lindistill.trainers.balanced_init(
            cfg, ts, lindistill.seeding.derive(config.seed, "init"),
            w_hat=w_hat)
        w, _, trace = lindistill.trainers.train_deep(
            stack, ts, cfg, reference=w_hat)
    distance = (float(np.linalg.norm(w - w_hat))
                if w_hat is not None else None)
    manifest.parameters.update(
        trainer=dataclasses.asdict(cfg), n=ts.n, d=ts.d,
        step=trace.step, halvings=trace.halvings,
        stop_reason=trace.stop_reason, final_loss=trace.final.loss,
        distance=distance)
    manifest.warnings.extend(trace.warnings)
    out.write_frame("weights.csv", _weights_frame(w))
    out.write_frame("trace.csv", trace.to_frame())
    print(f"loss {trace.final.loss:.6e}  "
          f"‖w − ŵ‖ {distance if distance is not None else float('nan'):.6e}  "
          f"stop {trace.stop_reason}")
    return manifest


def cmd_closed_form(config, out, arguments):
    """Write the closed-form distillation solution."""
    _, ts = _transfer_set(config)
    w_hat = lindistill.distill.closed_form_solution(ts)
    manifest = lindistill.manifest.RunManifest.for_config(
        "closed-form", config)
    manifest.parameters.update(
        n=ts.n, d=ts.d, loss=lindistill.distill.loss(w_hat, ts),
        exact=ts.n >= ts.d)
    out.write_frame("weights.csv", _weights_frame(w_hat))
    return manifest


def cmd_risk(config, out, arguments):
    """Estimate the transfer risk of a stored or closed-form student."""
    task, ts = _transfer_set(config)
    section = config.section("risk")
    if section["weights"] is None:
        student = "closed-form"
        w = lindistill.distill.closed_form_solution(ts)
    else:
        student = section["weights"]
        w = _read_weights(student)
    rng = lindistill.seeding.derive(config.seed, "risk")
    if isinstance(task, lindistill.tasks.EmpiricalTask):
        risk = lindistill.risk.transfer_risk_on(
            w, task.w_star, task.inputs("eval"))
    else:
        risk = lindistill.risk.transfer_risk_mc(
            w, task.w_star, task, section["mc_samples"], rng)
    frame = pandas.DataFrame([{"student": student,
                               **dataclasses.asdict(risk)}])
    out.write_frame("risk.csv", frame)
    manifest = lindistill.manifest.RunManifest.for_config("risk", config)
    manifest.parameters.update(student=student, **dataclasses.asdict(risk))
    print(f"risk {risk.estimate:.6f} ± {risk.half_width:.6f} (m = {risk.m})")
    return manifest


def _curve(config, section, task):
    if section["curve"] is not None:
        try:
            frame = pandas.read_csv(section["curve"])
            return lindistill.geometry.PCurve(
                thetas=frame["theta"].to_numpy(),
                values=frame["p"].to_numpy())
        except (KeyError, lindistill.error.DomainError,
                lindistill.error.UsageError) as error:
            raise lindistill.error.ContractError(
                f"invalid curve: {error}", field="bound.curve") from error
    if hasattr(task, "p"):
        return task.p
    return lindistill.geometry.reverse_cdf_estimate(
        task, task.w_star, CURVE_GRID, section["curve_samples"],
        lindistill.seeding.derive(config.seed, "curve"))


def cmd_bound(config, out, arguments):
    """Optimise the risk bound over β and report both endpoints."""
    section = config.section("bound")
    task, ts = _transfer_set(config)
    p = _curve(config, section, task)
    n = config.n
    exact = section["exact"]
    if exact is None:
        exact = n >= ts.d
    epsilon = section["epsilon"]
    w_hat_norm = section["w_hat_norm"]
    if epsilon is not None:
        if w_hat_norm is None:
            w_hat_norm = float(np.linalg.norm(
                lindistill.distill.closed_form_solution(ts)))
        if not epsilon <= w_hat_norm / 2:
            raise lindistill.error.ContractError(
                f"the approximate bound requires epsilon <= ‖ŵ‖/2 = "
                f"{w_hat_norm / 2:.4g}, got {epsilon}", field="bound.epsilon")
        if lindistill.risk.small_angle_bound(epsilon, w_hat_norm) > np.pi / 2:
            raise lindistill.error.ContractError(
                "epsilon leaves no admissible β; angular slack "
                "sqrt(2πε/‖ŵ‖) exceeds π/2", field="bound.epsilon")
    best = lindistill.risk.bound_optimize_beta(
        p, n, section["grid_size"], exact=exact, tight=section["tight"],
        epsilon=epsilon, w_hat_norm=w_hat_norm)
    if epsilon is None:
        ends = [lindistill.risk.bound_thm3(p, beta, n, exact=exact,
                                           tight=section["tight"])
                for beta in (0.0, np.pi / 2)]
    else:
        delta = lindistill.risk.small_angle_bound(epsilon, w_hat_norm)
        ends = [lindistill.risk.bound_approx(p, beta, n, epsilon, w_hat_norm,
                                             tight=section["tight"])
                for beta in (0.0, np.pi / 2 - delta)]
    rows = [{"point": point, **report.as_row()}
            for point, report in zip(("optimum", "lower", "upper"),
                                     (best, *ends))]
    out.write_frame("bound.csv", pandas.DataFrame(rows))
    manifest = lindistill.manifest.RunManifest.for_config("bound", config)
    manifest.parameters.update(best.as_row())
    if best.vacuous:
        manifest.warnings.append(f"bound {best.value:.4f} is vacuous")
    print(f"bound {best.value:.6f} at β = {best.beta:.6f}"
          + ("  (vacuous)" if best.vacuous else ""))
    return manifest


def cmd_experiment(config, out, arguments):
    """Run one experiment and write its tables."""
    cfg = config.experiment(arguments.name, threads=arguments.threads)
    table = lindistill.experiments.run(cfg)
    out.write("results.csv", table.to_csv)
    out.write_frame("summary.csv", table.summary())
    if arguments.plot:
        out.write("plot.svg",
                  lambda path: lindistill.plot.plot_summary(table, path))
    manifest = lindistill.manifest.RunManifest.for_config(
        "experiment", config)
    manifest.parameters.update(dataclasses.asdict(cfg), metrics=table.metrics)
    manifest.failures.update(table.failures)
    if table.total_failures:
        manifest.warnings.append(f"{table.total_failures} trials failed")
    print(table.summary().to_string(index=False))
    return manifest


def cmd_verify(config, out, arguments):
    """Run the property checks; a failing check fails the command."""
    checks = lindistill.verify.run_checks(config.seed, arguments.check)
    out.write_frame("verify.csv", pandas.DataFrame(
        [check.as_row() for check in checks]))
    manifest = lindistill.manifest.RunManifest.for_config("verify", config)
    manifest.parameters.update(
        checks=[check.name for check in checks],
        failed=[check.name for check in checks if not check.passed])
    for check in checks:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name}  "
              f"{check.violations}/{check.cases}  {check.detail}: "
              f"{check.worst:.3g}")
    return manifest


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=pathlib.Path,
        help="Path to a YAML configuration; defaults apply when omitted.")
    common.add_argument(
        "--seed", type=int, help="Master seed, overriding the configuration.")
    common.add_argument(
        "--out", type=pathlib.Path,
        help="Output directory (default: runs/<command>).")
    common.add_argument(
        "-v", "--verbose", action="count", default=0,
        help="Log more; repeat for debug output.")
    common.add_argument(
        "--mnist-dir", type=pathlib.Path,
        help="Directory of the MNIST IDX files, overriding "
             f"{lindistill.config.MNIST_DIR_VARIABLE}.")

    parser = argparse.ArgumentParser(
        prog="lindistill",
        description="Linear knowledge distillation laboratory.")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, function in (("train", cmd_train),
                           ("closed-form", cmd_closed_form),
                           ("risk", cmd_risk),
                           ("bound", cmd_bound)):
        command = commands.add_parser(
            name, parents=[common], help=function.__doc__)
        command.set_defaults(function=function)
    experiment = commands.add_parser(
        "experiment", parents=[common], help=cmd_experiment.__doc__)
    experiment.add_argument(
        "name", choices=lindistill.experiments.EXPERIMENTS)
    experiment.add_argument(
        "--plot", action="store_true", help="Also write plot.svg.")
    experiment.add_argument(
        "--threads", type=int, help="Trials run concurrently.")
    experiment.set_defaults(function=cmd_experiment)
    verify = commands.add_parser(
        "verify", parents=[common], help=cmd_verify.__doc__)
    verify.add_argument(
        "--check", action="append", choices=list(lindistill.verify.CHECKS),
        help="Run only this check; may be repeated.")
    verify.set_defaults(function=cmd_verify)
    return parser


def _load(arguments):
    if arguments.config is None:
        config = lindistill.config.Config({})
        return config.override(seed=arguments.seed,
                               mnist_dir=arguments.mnist_dir)
    return lindistill.config.Config.load(
        arguments.config, seed=arguments.seed, mnist_dir=arguments.mnist_dir)


def main(argv=None):
    """Run the command line and return its exit code."""
    parser = _parser()
    arguments = parser.parse_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][
            min(arguments.verbose, 2)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = _load(arguments)
        out = lindistill.manifest.OutputDirectory(
            arguments.out or pathlib.Path("runs") / arguments.command)
        manifest = arguments.function(config, out, arguments)
        out.finish(manifest)
    except lindistill.error.MissingDataError as error:
        print(f"lindistill: error: {error}", file=sys.stderr)
        return 1
    except (lindistill.error.ContractError, lindistill.error.UsageError,
            FileNotFoundError) as error:
        print(f"lindistill: error: {error}", file=sys.stderr)
        return 2
    except (lindistill.error.DomainError, lindistill.error.FormatError,
            lindistill.error.StepSizeError,
            lindistill.error.NumericError) as error:
        print(f"lindistill: error: {error}", file=sys.stderr)
        return 1
    if manifest.command == "verify" and manifest.parameters["failed"]:
        return 1
    return 0


def _main():
    sys.exit(main())
