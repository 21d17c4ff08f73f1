"""Deterministic random streams.

Every stochastic operation in the package takes an explicit
:class:`numpy.random.Generator`. Streams used by experiments are never
drawn from one another sequentially. Instead each is derived from the
master seed, a purpose label and an index, so that trials can run in
any order, or concurrently, and still see identical random numbers.
"""

import hashlib

import numpy as np


def label_key(label):
    """Map a purpose label to a 32-bit integer."""
    digest = hashlib.sha256(label.encode()).digest()
    return int.from_bytes(digest[:4], "big")


def derive(master, label, *indices):
    """Derive a generator for ``(master, label, *indices)``.

    :param master: Master seed, a non-negative integer.
    :param label: Purpose of the stream, e.g. ``"transfer"``.
    :param indices: Further non-negative integers such as a trial index.
    """
    entropy = [int(master), label_key(label), *(int(i) for i in indices)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def master_from(rng):
    """Draw a master seed from an existing generator."""
    return int(rng.integers(0, 2**63 - 1))
