"""Reading and writing IDX files, the format MNIST is distributed in.

An IDX file starts with a big-endian 32-bit magic number whose low
byte is the number of dimensions and whose third byte is the element
type (``0x08`` for unsigned bytes), followed by one big-endian 32-bit
size per dimension and then the elements in row-major order::

    [offset] [type]          [value]
    0000     32 bit integer  0x00000803  magic (images)
    0004     32 bit integer  count
    0008     32 bit integer  rows
    0012     32 bit integer  columns
    0016     unsigned byte   pixels ...

Files whose name ends in ``.gz`` are transparently (de)compressed.
"""

import dataclasses
import gzip
import logging
import math
import pathlib
import struct

import numpy as np

import lindistill.error

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_UNSIGNED_BYTE = 0x08


@dataclasses.dataclass(frozen=True)
class LabeledPool:
    """Finite labelled sample of inputs.

    :param X: Inputs as columns, shape ``(d, count)``.
    :param labels: Integer label per column.
    """

    X: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2 or self.labels.shape != (self.X.shape[1],):
            raise lindistill.error.UsageError(
                f"pool of shape {self.X.shape} with {self.labels.shape} labels")

    def __len__(self):
        return self.X.shape[1]

    def subset(self, index):
        return LabeledPool(X=self.X[:, index], labels=self.labels[index])


def _open(path, mode):
    path = pathlib.Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return path.open(mode)


def read_idx(path, magic):
    """Read an unsigned-byte IDX file into an array.

    :param magic: The magic number the file must start with.
    :raises lindistill.error.FormatError: On a bad magic number or a
        body whose length does not match the header.
    """
    with _open(path, "rb") as file:
        data = file.read()
    if len(data) < 4:
        raise lindistill.error.FormatError(
            f"{path}: file of {len(data)} bytes has no magic number")
    observed, = struct.unpack(">I", data[:4])
    if observed != magic:
        raise lindistill.error.FormatError(
            f"{path}: bad magic 0x{observed:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise lindistill.error.FormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    body = data[header:]
    expected = math.prod(dims)
    if len(body) != expected:
        raise lindistill.error.FormatError(
            f"{path}: expected {expected} data bytes for dims {dims}, "
            f"found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def write_idx(path, array):
    """Write an unsigned-byte array as an IDX file."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = (_UNSIGNED_BYTE << 8) | array.ndim
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    with _open(path, "wb") as file:
        file.write(header)
        file.write(array.tobytes())


def load_mnist_idx(images_path, labels_path, *, keep=(0, 1)):
    """Load the 0/1 digits of an MNIST split.

    Images are flattened row-major to vectors and scaled to ``[0, 1]``.
    Records whose label is not in *keep* are dropped.

    :returns: :class:`LabeledPool` with inputs of dimension rows×columns.
    """
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise lindistill.error.FormatError(
            f"{images_path} holds {images.shape[0]} images but "
            f"{labels_path} holds {labels.shape[0]} labels")
    selected = np.isin(labels, keep)
    flat = images[selected].reshape(int(selected.sum()), -1)
    logger.info("loaded %d of %d records from %s",
                flat.shape[0], images.shape[0], images_path)
    return LabeledPool(
        X=np.ascontiguousarray(flat.T, dtype=float) / 255.0,
        labels=labels[selected].astype(np.int64),
    )


def write_mnist_idx(images_path, labels_path, images, labels):
    """Write images of shape ``(count, rows, cols)`` and their labels."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3 or labels.shape != images.shape[:1]:
        raise lindistill.error.UsageError(
            f"images {images.shape} and labels {labels.shape} do not match")
    write_idx(images_path, images)
    write_idx(labels_path, labels)
