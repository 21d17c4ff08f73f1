"""Load and validate run configuration files.

A configuration is a YAML document checked against the JSON Schema
bundled as :file:`lindistill/schema.yaml`. Validation fills in every
default, so the stored document alone reproduces a run.
"""

import base64
import copy
import functools
import hashlib
import importlib.resources
import json
import logging
import os

import jsonschema
import jsonschema.validators
import numpy as np
import yaml

import lindistill.error
import lindistill.experiments
import lindistill.tasks
import lindistill.trainers

logger = logging.getLogger(__name__)

#: Environment variable naming the MNIST directory.
MNIST_DIR_VARIABLE = "LINDISTILL_MNIST_DIR"


def _extend_with_default(validator_class):
    validate_properties = validator_class.VALIDATORS["properties"]

    def set_defaults(validator, properties, instance, schema):
        if validator.is_type(instance, "object"):
            for name, subschema in properties.items():
                if "default" in subschema:
                    instance.setdefault(
                        name, copy.deepcopy(subschema["default"]))
        yield from validate_properties(validator, properties, instance, schema)

    return jsonschema.validators.extend(
        validator_class, {"properties": set_defaults})


_DefaultingValidator = _extend_with_default(jsonschema.Draft7Validator)


@functools.lru_cache(maxsize=None)
def schema():
    """The bundled configuration schema."""
    with importlib.resources.open_text("lindistill", "schema.yaml") as source:
        return yaml.safe_load(source)


def materialise(document):
    """Validate *document* and return a copy with every default filled in.

    :raises lindistill.error.ContractError: Naming the offending field
        if the document does not match the schema.
    """
    document = {} if document is None else copy.deepcopy(document)
    if not isinstance(document, dict):
        raise lindistill.error.ContractError(
            f"configuration must be a mapping, not {type(document).__name__}")
    validator = _DefaultingValidator(schema())
    try:
        validator.validate(document)
    except jsonschema.ValidationError as error:
        field = ".".join(str(part) for part in error.absolute_path) or None
        raise lindistill.error.ContractError(
            error.message, field=field) from error
    return document


def config_hash(document):
    """SHA-256 of *document*, independent of key order.

    Encoded url-safe base64 without padding.
    """
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canonical.encode()).digest()
    return base64.urlsafe_b64encode(digest).decode().rstrip("=")


class Config:
    """Validated configuration document with typed accessors."""

    def __init__(self, document, *, source=None):
        self.document = materialise(document)
        self.source = source

    def __repr__(self):
        return f"<{self.__class__.__name__} {self.hash[:12]}>"

    @classmethod
    def from_yaml(cls, stream, *, source=None):
        try:
            document = yaml.safe_load(stream)
        except yaml.YAMLError as error:
            raise lindistill.error.ContractError(
                f"not a YAML document: {error}") from error
        return cls(document, source=source)

    @classmethod
    def load(cls, path, *, seed=None, mnist_dir=None):
        """Read *path* and apply command-line overrides.

        The MNIST directory is taken from *mnist_dir* if given, then
        from :data:`MNIST_DIR_VARIABLE`, then from the file.

        :raises FileNotFoundError: If *path* does not exist.
        """
        with open(path) as stream:
            config = cls.from_yaml(stream, source=str(path))
        return config.override(seed=seed, mnist_dir=mnist_dir)

    def override(self, *, seed=None, mnist_dir=None):
        document = copy.deepcopy(self.document)
        if seed is not None:
            document["seed"] = seed
        mnist_dir = mnist_dir or os.environ.get(MNIST_DIR_VARIABLE)
        if mnist_dir:
            document["mnist_dir"] = str(mnist_dir)
        return Config(document, source=self.source)

    @property
    def hash(self):
        return config_hash(self.document)

    @property
    def seed(self):
        return self.document["seed"]

    @property
    def n(self):
        return self.document["n"]

    @property
    def mnist_dir(self):
        return self.document["mnist_dir"]

    def section(self, name):
        return self.document[name]

    def teacher(self):
        section = self.document["teacher"]
        return lindistill.tasks.TeacherConfig(
            step=section["step"], iterations=section["iterations"])

    def task(self, rng):
        """Build the configured task; *rng* draws a missing teacher."""
        section = self.document["task"]
        kind = section["kind"]
        if kind == "mnist":
            if self.mnist_dir is None:
                raise lindistill.error.MissingDataError(
                    list(lindistill.tasks.MNIST_FILES.values()))
            return lindistill.tasks.EmpiricalTask.from_mnist(
                self.mnist_dir, self.teacher())
        d = section["d"]
        w_star = section["w_star"]
        if w_star is None:
            w_star = rng.standard_normal(d)
            w_star /= np.linalg.norm(w_star)
        elif len(w_star) != d:
            raise lindistill.error.ContractError(
                f"{len(w_star)} weights for dimension {d}",
                field="task.w_star")
        if kind == "poly":
            return lindistill.tasks.PolyAngleTask(
                kappa=section["kappa"], d=d, w_star=w_star)
        if kind == "margin":
            return lindistill.tasks.MarginTask(
                d=d, w_star=w_star, beta0=section["beta0"])
        return lindistill.tasks.IsotropicTask(d=d, w_star=w_star)

    @property
    def depth(self):
        return self.document["trainer"]["depth"]

    def shallow(self):
        section = self.document["trainer"]
        return lindistill.trainers.ShallowConfig(
            **{key: section[key] for key in _SHARED_TRAINER_KEYS})

    def deep(self, w_hat_norm):
        """Deep trainer settings; ε defaults to a share of *w_hat_norm*."""
        section = self.document["trainer"]
        epsilon = section["epsilon"]
        if epsilon is None:
            epsilon = section["epsilon_ratio"] * w_hat_norm
        return lindistill.trainers.DeepConfig(
            depth=section["depth"],
            epsilon=epsilon,
            widths=section["widths"],
            init_scale=section["init_scale"],
            force=section["force"],
            **{key: section[key] for key in _SHARED_TRAINER_KEYS},
        )

    def experiment(self, name, *, threads=None):
        section = dict(self.document["experiment"])
        if threads is not None:
            section["threads"] = threads
        for key in ("kappas", "deltas", "learners"):
            if section[key] is not None:
                section[key] = tuple(section[key])
        return lindistill.experiments.ExperimentConfig(
            experiment=name,
            seed=self.seed,
            mnist_dir=self.mnist_dir,
            teacher=self.teacher(),
            **section,
        )


_SHARED_TRAINER_KEYS = (
    "step", "max_iters", "loss_tol", "grad_tol", "stride", "max_halvings")
