"""Dense float64 matrices and seeded random streams.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.  The
helpers here add the guarantees the rest of the package relies on: a
matrix product with a fixed summation order, and finiteness checks that
raise instead of letting NaN/Inf propagate silently.

Random numbers come from numpy's PCG64 bit generator.  A stream is keyed by
``(seed, stream_id)`` through ``SeedSequence(seed, spawn_key=(stream_id,))``,
so streams with different ids are independent and reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeError

DTYPE = np.float64


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array (a copy is not forced)."""
    m = np.asarray(x, dtype=DTYPE)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    check_finite(m, name)
    return m


def check_finite(x: np.ndarray, name: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return x


def matmul(a, b) -> np.ndarray:
    """Matrix product accumulated left-to-right over the inner index.

    Each output entry is ``((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)``, the same
    order a schoolbook triple loop uses, so results are bit-reproducible and
    independent of the BLAS build.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    n, k = a.shape
    out = np.zeros((n, b.shape[1]), dtype=DTYPE)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(k):
            out += a[:, j : j + 1] * b[j : j + 1, :]
    return check_finite(out, "matmul result")


class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Single owner: share across threads only by giving each thread its own
    ``stream_id``.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._key = (self.stream_id,)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._key))
        )

    @classmethod
    def _from_key(cls, seed: int, key: tuple) -> "RngStream":
        s = cls.__new__(cls)
        s.seed, s.stream_id, s._key = seed, key[0], key
        s._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key))
        )
        return s

    def child(self, name: int) -> "RngStream":
        """Derived stream, independent of the parent and of other children."""
        return RngStream._from_key(self.seed, self._key + (int(name),))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise ValueError(f"invalid range [{lo}, {hi})")
        v = self._gen.uniform(lo, hi, size)
        # uniform() can round up to hi for wide ranges
        return np.minimum(v, np.nextafter(hi, lo))

    def normal(self, mean: float = 0.0, sd: float = 1.0, size=None):
        if not sd >= 0:
            raise ValueError(f"negative standard deviation {sd}")
        if sd == 0:
            return mean if size is None else np.full(size, mean, dtype=DTYPE)
        return self._gen.normal(mean, sd, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def bernoulli(self, p: float, size) -> np.ndarray:
        return self._gen.random(size) < p


def rng_uniform(s: RngStream, lo: float, hi: float) -> float:
    return float(s.uniform(lo, hi))


def rng_normal(s: RngStream, mean: float, sd: float) -> float:
    return float(s.normal(mean, sd))
