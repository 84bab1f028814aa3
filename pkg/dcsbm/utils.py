import contextlib
import inspect
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = ("get_callable_params", "atomic_write", "make_rng", "derive_seed")

WARM_START_KEY = 0xE11A


def get_callable_params(c):
    return list(inspect.signature(c).parameters.keys())


@contextlib.contextmanager
def atomic_write(path, mode="w", **kwargs):
    """
    Write to a temporary file next to ``path`` and rename it into place on success,
    so a failure never leaves a partial file behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    os.close(fd)

    try:
        with open(tmp, mode, **kwargs) as handle:
            yield handle

        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def make_rng(seed) -> np.random.Generator:
    """The one generator every sampler goes through: PCG64 seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed, *keys) -> int:
    """
    Child seed for the key path ``keys``: the first 64-bit word produced by
    ``SeedSequence(seed, spawn_key=keys)``.
    """
    sequence = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, np.uint64)[0])
