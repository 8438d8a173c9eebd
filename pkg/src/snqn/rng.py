"""Named deterministic random substreams derived from a single root seed.

Every source of randomness in the package (initialization, shuffling,
negative sampling, coin flips, probing) pulls its generator from here so
that one root seed reproduces a whole run bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(root_seed: int, *names: object) -> np.random.Generator:
    """Return an independent generator for (root_seed, names...).

    The same (seed, names) pair always yields the same stream; distinct
    name tuples yield streams that are independent for practical purposes.
    """
    h = hashlib.blake2b(digest_size=8)
    for name in names:
        h.update(str(name).encode("utf-8"))
        h.update(b"\x1f")
    key = int.from_bytes(h.digest(), "little")
    seq = np.random.SeedSequence([int(root_seed) & _MASK64, key])
    return np.random.default_rng(seq)
