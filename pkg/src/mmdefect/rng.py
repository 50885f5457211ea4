"""Splittable, counter-based random number streams.

Every random draw in the project flows through an RngStream so that any
component (data synthesis, weight init, epoch shuffles) can be replayed
bit-for-bit from (master_seed, stream_id, counter) alone, independently of
call order elsewhere in the program.

Stream derivation is documented and stable:

    label_hash = first 8 bytes of blake2b(label)           (little-endian)
    stream_id  = mix64(label_hash XOR (index * GOLDEN))

and the value at counter c is

    out(c) = mix64(base + (c + 1) * GOLDEN),
    base   = mix64(master_seed XOR mix64(stream_id))

where mix64 is the splitmix64 finalizer. This is splitmix64 in counter
mode with a per-stream base, which keeps draws vectorizable.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U53 = 1.0 / float(1 << 53)


def _mix64(x: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """splitmix64 finalizer; accepts scalars or uint64 arrays."""
    with np.errstate(over="ignore"):
        x = np.uint64(x) if np.isscalar(x) or isinstance(x, (int, np.integer)) else x
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        x = x ^ (x >> np.uint64(31))
    return x


def _label_hash(label: str) -> np.uint64:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return np.uint64(int.from_bytes(digest, "little"))


class RngStream:
    """Deterministic stream: same (master_seed, stream_id, counter) -> same value."""

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF)
        self.stream_id = np.uint64(stream_id & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0
        self._base = _mix64(self.master_seed ^ _mix64(self.stream_id))

    def stream(self, label: str, index: int = 0) -> "RngStream":
        """Derive an independent child stream from a purpose label and index."""
        with np.errstate(over="ignore"):
            sid = _mix64(_label_hash(label) ^ (np.uint64(index & 0xFFFFFFFFFFFFFFFF) * _GOLDEN))
        return RngStream(int(self.master_seed), int(sid))

    def _raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            counters = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
            out = _mix64(self._base + counters * _GOLDEN)
        self.counter += n
        return out

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform draws in [0, 1) with 53-bit resolution."""
        n = int(np.prod(size)) if size is not None else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _U53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None) -> np.ndarray | float:
        """Standard normal draws via Box-Muller."""
        n = int(np.prod(size)) if size is not None else 1
        m = (n + 1) // 2
        u = (self._raw(2 * m) >> np.uint64(11)).astype(np.float64) * _U53
        u1 = 1.0 - u[:m]  # (0, 1], keeps log finite
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high) (modulo reduction; span << 2^64)."""
        span = np.uint64(high - low)
        n = int(np.prod(size)) if size is not None else 1
        v = (self._raw(n) % span).astype(np.int64) + low
        if size is None:
            return int(v[0])
        return v.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def uniform_range(self, low: float, high: float, size=None):
        u = self.uniform(size)
        return low + (high - low) * u


def cholesky2x2(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PSD 2x2 matrix.

    Handles the degenerate (zero-variance) cases exactly; raises ValueError
    for matrices that are not PSD within a small tolerance.
    """
    s = np.asarray(sigma, dtype=np.float64)
    if s.shape != (2, 2):
        raise ValueError(f"covariance must be 2x2, got {s.shape}")
    if abs(s[0, 1] - s[1, 0]) > 1e-12 * max(1.0, abs(s[0, 1])):
        raise ValueError("covariance must be symmetric")
    a2, b2, c = s[0, 0], s[1, 1], s[0, 1]
    if a2 < -1e-12 or b2 < -1e-12:
        raise ValueError("covariance has negative variance")
    a = np.sqrt(max(a2, 0.0))
    if a == 0.0:
        if abs(c) > 1e-12:
            raise ValueError("covariance not PSD: zero variance with nonzero covariance")
        l10, l11sq = 0.0, max(b2, 0.0)
    else:
        l10 = c / a
        l11sq = b2 - l10 * l10
        if l11sq < -1e-9 * max(1.0, b2):
            raise ValueError("covariance not positive semidefinite")
        l11sq = max(l11sq, 0.0)
    return np.array([[a, 0.0], [l10, np.sqrt(l11sq)]])


def gaussian2d(rng: RngStream, mu, sigma, n: int = 1) -> np.ndarray:
    """Draw n points from a bivariate normal N(mu, sigma). Shape (n, 2)."""
    chol = cholesky2x2(sigma)
    z = rng.normal(size=(n, 2))
    return z @ chol.T + np.asarray(mu, dtype=np.float64)
