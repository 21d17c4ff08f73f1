"""Run manifests and atomic output directories.

Every command writes its artifacts through an :class:`OutputDirectory`
and finishes by writing exactly one :file:`manifest.json`, which holds
the materialised configuration and therefore reproduces the run.
"""

import dataclasses
import datetime
import importlib.metadata
import json
import logging
import os
import pathlib
import tempfile
import typing

import numpy as np

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
#: Layout version of the manifest document.
MANIFEST_VERSION = 1


def tool_version():
    try:
        return importlib.metadata.version("lindistill")
    except importlib.metadata.PackageNotFoundError:
        return "0.0.0"


def now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, pathlib.PurePath):
        return str(value)
    if dataclasses.is_dataclass(value):
        return dataclasses.asdict(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def _keyed(mapping):
    return {str(key): value for key, value in mapping.items()}


@dataclasses.dataclass
class RunManifest:
    """Provenance of one command invocation.

    :param parameters: Command-specific settings, resolved values only.
    :param failures: Failed trial counts by parameter value.
    """

    command: str
    config_hash: str
    seed: int
    config: dict
    parameters: dict = dataclasses.field(default_factory=dict)
    started: str = dataclasses.field(default_factory=now)
    finished: typing.Optional[str] = None
    outputs: typing.List[str] = dataclasses.field(default_factory=list)
    failures: dict = dataclasses.field(default_factory=dict)
    warnings: typing.List[str] = dataclasses.field(default_factory=list)
    version: str = dataclasses.field(default_factory=tool_version)
    manifest_version: int = MANIFEST_VERSION

    @classmethod
    def for_config(cls, command, config, **kwargs):
        return cls(command=command, config_hash=config.hash,
                   seed=config.seed, config=config.document, **kwargs)

    def to_json(self):
        document = dataclasses.asdict(self)
        document["failures"] = _keyed(document["failures"])
        return json.dumps(document, indent=2, sort_keys=True,
                          default=_jsonable) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


class OutputDirectory:
    """Directory whose files are each written atomically.

    Files are written to a temporary name in the same directory and
    renamed into place, so a reader never sees a partial file.
    """

    def __init__(self, path):
        self.path = pathlib.Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.written = []

    def __repr__(self):
        return f"<{self.__class__.__name__} '{self.path}'>"

    def write(self, name, writer):
        """Call ``writer(temporary_path)`` and move the result to *name*."""
        descriptor, temporary = tempfile.mkstemp(
            dir=self.path, prefix=f".{name}.", suffix=".tmp")
        os.close(descriptor)
        try:
            writer(temporary)
            os.replace(temporary, self.path / name)
        except BaseException:
            if os.path.exists(temporary):
                os.unlink(temporary)
            raise
        logger.info("wrote %s", self.path / name)
        if name not in self.written:
            self.written.append(name)
        return self.path / name

    def write_text(self, name, text):
        def writer(path):
            with open(path, "w", newline="\n") as file:
                file.write(text)
        return self.write(name, writer)

    def write_frame(self, name, frame):
        return self.write(name, lambda path: frame.to_csv(
            path, index=False, lineterminator="\n"))

    def finish(self, manifest):
        """Record the outputs in *manifest* and write it last."""
        manifest.outputs = [name for name in self.written if name != MANIFEST]
        manifest.finished = now()
        return self.write_text(MANIFEST, manifest.to_json())
