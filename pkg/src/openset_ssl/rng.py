"""Named, reproducible random streams derived from one master seed.

Every source of randomness in the package is a child stream keyed by the
master seed plus a string label (and optional integer subkeys).  Streams
are mutually independent, and drawing from one never shifts another, so
enabling or disabling a pipeline stage cannot perturb the stages around it.
"""

import hashlib

import numpy as np


def _label_entropy(label):
    # stable 64-bit digest of the label, independent of PYTHONHASHSEED
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(master_seed, label, *subkeys):
    """Return a Generator for the stream named (label, *subkeys).

    The same (master_seed, label, subkeys) always yields the same stream.
    """
    entropy = (int(master_seed), _label_entropy(label)) + tuple(
        int(k) for k in subkeys
    )
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
