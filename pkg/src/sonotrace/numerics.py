"""Dense float64 arrays, reproducible Gaussian randomness, and small
symmetric-matrix linear algebra.

Everything here is pure and deterministic: a :class:`Tensor` is immutable
once built, and a :class:`SeededRng` produces the same stream on every
platform (counter-based Philox bits + Box-Muller in pinned order).
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import ArgumentError, NumericDomainError

__all__ = [
    "Tensor",
    "SeededRng",
    "derive_seed",
    "seeded_gaussian",
    "softmax_rows",
    "sym_eigh",
    "sym_sqrtm",
    "svdvals_jacobi",
]


class Tensor:
    """An immutable dense array of 64-bit floats.

    Construction validates that every value is finite; NaN or Inf raise
    :class:`NumericDomainError`. The wrapped buffer is marked read-only, so
    instances are safe to share across threads.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericDomainError("Tensor values must be finite (got NaN or Inf)")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __eq__(self, other):
        return isinstance(other, Tensor) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.shape, self.data.tobytes()))


def derive_seed(master: int, *labels) -> int:
    """Derive a child seed from a master seed and a label path.

    Uses SHA-256 of the decimal master seed joined with the labels, so the
    derivation is stable across platforms and Python versions.
    """
    text = ":".join([str(int(master))] + [str(x) for x in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class SeededRng:
    """Deterministic Gaussian/uniform source.

    Bits come from numpy's counter-based Philox generator; Gaussian variates
    are produced by the Box-Muller transform applied to consecutive uniform
    pairs in row-major order. This keeps streams identical across platforms
    and lets the test suite pin reference vectors.

    ``calls`` counts how many ``gaussian`` draws were made, which the sampler
    tests use to prove the deterministic path never touches the RNG.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._bits = np.random.Generator(np.random.Philox(self.seed))
        self.calls = 0

    def derive(self, *labels) -> "SeededRng":
        """A fresh, independent stream; does not consume this stream."""
        return SeededRng(derive_seed(self.seed, *labels))

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        return self._bits.random(int(n))

    def integers(self, low: int, high: int, n: int | None = None):
        """Uniform integers in [low, high)."""
        out = self._bits.integers(low, high, size=n)
        return out if n is not None else int(out)

    def gaussian(self, shape, std: float = 1.0) -> np.ndarray:
        """i.i.d. N(0, std^2) samples of the given shape."""
        if std < 0:
            raise ArgumentError(f"std must be >= 0, got {std}")
        self.calls += 1
        shape = tuple(int(s) for s in (shape if hasattr(shape, "__iter__") else (shape,)))
        n = int(np.prod(shape)) if shape else 1
        if n == 0:
            return np.zeros(shape)
        npairs = (n + 1) // 2
        u = self._bits.random(2 * npairs)
        u1 = 1.0 - u[0::2]  # in (0, 1], log-safe
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * npairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return (std * z[:n]).reshape(shape)


def seeded_gaussian(shape, std: float, rng: SeededRng) -> Tensor:
    """A Tensor of i.i.d. zero-mean Gaussians with the given std."""
    if std < 0:
        raise ArgumentError(f"std must be >= 0, got {std}")
    return Tensor(rng.gaussian(shape, std))


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ArgumentError("softmax_rows requires finite entries")
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sym_eigh(m: np.ndarray, tol: float = 1e-9, max_sweeps: int = 50):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with ``m ~ V diag(w) V^T``.
    Iterates full sweeps until the off-diagonal Frobenius norm drops below
    1e-12 relative to the matrix norm. Intended for the small (<= 256)
    matrices this package needs; raises on asymmetric input.
    """
    a = np.array(m, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ArgumentError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=tol):
        raise NumericDomainError("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1.0)
    for _ in range(max_sweeps):
        off = math.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off < 1e-12 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:  # theta^2 would overflow; use the limit
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    return np.diag(a).copy(), v


def sym_sqrtm(m: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root: S with S @ S ~ m.

    Eigenvalues in [-tol, 0) are clamped to zero before rooting; anything
    below -tol, or asymmetry beyond tol, raises :class:`NumericDomainError`.
    """
    w, v = sym_eigh(m, tol=tol)
    floor = -tol * max(1.0, float(np.max(np.abs(w))))
    if np.any(w < floor):
        raise NumericDomainError(
            f"matrix has eigenvalue {w.min():.3e} below -tol; not PSD"
        )
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (s + s.T)


def svdvals_jacobi(m: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """Singular values by one-sided Jacobi column orthogonalization.

    Accurate for tiny singular values (no Gram-matrix squaring), which the
    Fréchet trace needs when covariances are rank deficient. Unordered.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2:
        raise ArgumentError(f"expected a matrix, got shape {a.shape}")
    n = a.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p] @ a[:, q]
                app = a[:, p] @ a[:, p]
                aqq = a[:, q] @ a[:, q]
                denom = math.sqrt(app * aqq)
                if denom == 0.0 or abs(apq) <= tol * denom:
                    continue
                rotated = True
                tau = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                col_p = c * a[:, p] - s * a[:, q]
                col_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = col_p, col_q
        if not rotated:
            break
    return np.sqrt(np.sum(a * a, axis=0))
