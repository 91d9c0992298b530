"""Lyapunov spectrum of a real matrix.

The Lyapunov exponents of ``x' = Ax`` are the distinct real parts of the
eigenvalues of ``A`` and the Lyapunov spaces are the sums of the real
generalized eigenspaces sharing a real part.  Invariant subspaces are taken
from ordered real Schur forms, so no Jordan form is ever computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InputError, RangeError

__all__ = [
    "SpectralData",
    "spectral_decompose",
    "adapted_gram",
    "lifted_gram",
    "matrix_exponential",
]

MAX_DIM = 8


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Lyapunov exponents, spaces, spectral projections and adapted metric.

    Attributes
    ----------
    exponents : tuple of float
        Strictly decreasing Lyapunov exponents.
    spaces : tuple of ndarray
        ``spaces[i]`` has shape ``(n, d_i)``; its columns are a basis of the
        Lyapunov space of ``exponents[i]``, orthonormal for ``gram``.
    center_index : int or None
        Index of the zero exponent, if present.
    proj_center, proj_hyperbolic, proj_plus, proj_minus : ndarray
        Projections onto the center, hyperbolic, unstable and stable parts
        along the complementary Lyapunov spaces.
    gram : ndarray
        Symmetric positive definite matrix making the Lyapunov spaces
        pairwise orthogonal.
    warnings : tuple of str
        Diagnostic notes, e.g. ambiguous clustering of real parts.
    """

    exponents: tuple
    spaces: tuple
    center_index: int | None
    proj_center: np.ndarray
    proj_hyperbolic: np.ndarray
    proj_plus: np.ndarray
    proj_minus: np.ndarray
    gram: np.ndarray
    group_tol: float = 1e-8
    warnings: tuple = field(default_factory=tuple)

    @property
    def dim(self) -> int:
        return self.gram.shape[0]

    def dims(self) -> list:
        return [b.shape[1] for b in self.spaces]

    def projection(self, i: int) -> np.ndarray:
        """Projection onto the i-th Lyapunov space along the others."""
        basis = self.spaces[i]
        # bases are G-orthonormal and the spaces G-orthogonal
        return basis @ basis.T @ self.gram

    def index_of(self, exponent: float, tol: float | None = None) -> int:
        """Index of the Lyapunov exponent closest to ``exponent``."""
        tol = max(self.group_tol, 1e-9) if tol is None else tol
        gaps = np.abs(np.asarray(self.exponents) - exponent)
        i = int(np.argmin(gaps))
        if gaps[i] > tol:
            raise InputError(f"{exponent} is not a Lyapunov exponent; have {self.exponents}")
        return i

    @property
    def hyperbolic_gap(self) -> float:
        """Smallest modulus of a nonzero exponent (``inf`` if there is none)."""
        nonzero = [abs(l) for i, l in enumerate(self.exponents) if i != self.center_index]
        return min(nonzero) if nonzero else float("inf")

    @property
    def center_basis(self) -> np.ndarray:
        if self.center_index is None:
            return np.zeros((self.dim, 0))
        return self.spaces[self.center_index]


def _check_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError("matrix has non-finite entries")
    return A


def _cluster(real_parts: np.ndarray, tol: float):
    """Group sorted-descending real parts whose consecutive gaps are <= tol."""
    order = np.sort(real_parts)[::-1]
    groups = [[order[0]]]
    for value in order[1:]:
        if groups[-1][-1] - value <= tol:
            groups[-1].append(value)
        else:
            groups.append([value])
    return groups


def _schur_subspace(A: np.ndarray, keep) -> np.ndarray:
    n = A.shape[0]
    if keep(np.inf) and keep(-np.inf):
        return np.eye(n)
    _, Z, sdim = linalg.schur(A, output="real", sort=lambda re, im: keep(re))
    return Z[:, :sdim]


def _intersect(S: np.ndarray, T: np.ndarray, dim: int) -> np.ndarray:
    if S.shape[1] == dim:
        return S
    if T.shape[1] == dim:
        return T
    # x = S a = T b  <=>  [S, -T] (a, b) = 0
    _, _, vh = np.linalg.svd(np.hstack([S, -T]))
    coeffs = vh[-dim:].T
    return S @ coeffs[: S.shape[1]]


def _fix_signs(q: np.ndarray) -> np.ndarray:
    # make the largest entry of each column positive, for readable output
    idx = np.argmax(np.abs(q), axis=0)
    signs = np.sign(q[idx, np.arange(q.shape[1])])
    signs[signs == 0] = 1.0
    return q * signs


def spectral_decompose(A, group_tol: float = 1e-8) -> SpectralData:
    """Lyapunov exponents and spaces of ``A``.

    Real parts closer than ``group_tol`` (chained) form one exponent and an
    exponent with modulus below ``group_tol`` is treated as exactly zero.
    """
    A = _check_matrix(A)
    n = A.shape[0]
    if n == 0 or n > MAX_DIM:
        raise InputError(f"dimension must be between 1 and {MAX_DIM}, got {n}")
    if not group_tol > 0:
        raise InputError("group_tol must be positive")

    eig = np.linalg.eigvals(A)
    real_parts = eig.real
    notes = []
    srt = np.sort(real_parts)
    diffs = np.diff(srt)
    if np.any((diffs > group_tol) & (diffs < 2 * group_tol)):
        notes.append(
            "ambiguous clustering: real parts at distance between group_tol and 2*group_tol"
        )

    groups = _cluster(real_parts, group_tol)
    # cut points halfway between neighbouring clusters
    cuts = [(g[-1] + h[0]) / 2 for g, h in zip(groups[:-1], groups[1:])]
    bases = []
    for i, g in enumerate(groups):
        upper = cuts[i - 1] if i > 0 else np.inf
        lower = cuts[i] if i < len(cuts) else -np.inf
        S = _schur_subspace(A, lambda re, lo=lower: re > lo)
        T = _schur_subspace(A, lambda re, hi=upper: re < hi)
        basis = _intersect(S, T, len(g))
        q, _ = np.linalg.qr(basis)
        bases.append(_fix_signs(q))

    exponents = [float(np.mean(g)) for g in groups]
    center_index = None
    for i, lam in enumerate(exponents):
        if abs(lam) < group_tol:
            exponents[i] = 0.0
            center_index = i

    # the QR bases are G-orthonormal for this G by construction
    gram = adapted_gram(bases)
    V = np.hstack(bases)
    if np.linalg.cond(V) > 1e6:
        # typical of a Jordan block split by rounding into two clusters
        notes.append("nearly parallel Lyapunov spaces; group_tol may be too small")
    Vinv = np.linalg.inv(V)
    splits = np.cumsum([0] + [b.shape[1] for b in bases])
    projs = []
    for i in range(len(bases)):
        sl = slice(splits[i], splits[i + 1])
        projs.append(V[:, sl] @ Vinv[sl, :])

    zero = np.zeros((n, n))
    plus = sum((p for p, l in zip(projs, exponents) if l > 0), zero.copy())
    minus = sum((p for p, l in zip(projs, exponents) if l < 0), zero.copy())
    center = projs[center_index] if center_index is not None else zero.copy()

    return SpectralData(
        exponents=tuple(exponents),
        spaces=tuple(bases),
        center_index=center_index,
        proj_center=center,
        proj_hyperbolic=plus + minus,
        proj_plus=plus,
        proj_minus=minus,
        gram=gram,
        group_tol=group_tol,
        warnings=tuple(notes),
    )


def adapted_gram(spaces) -> np.ndarray:
    """Gram matrix under which the given subspaces are pairwise orthogonal.

    Parameters
    ----------
    spaces : sequence of array_like
        Each entry has shape ``(n, d_i)`` (columns span the subspace); the
        dimensions must add up to ``n`` and the subspaces must span.

    Returns
    -------
    ndarray
        ``G = V^{-T} V^{-1}`` where ``V`` stacks Euclidean-orthonormal bases
        of the subspaces.  Inside each subspace ``G`` agrees with the
        Euclidean product; if the subspaces are already mutually orthogonal
        the identity is returned.
    """
    bases = []
    for s in spaces:
        s = np.asarray(s, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if not np.all(np.isfinite(s)):
            raise InputError("basis has non-finite entries")
        q, r = np.linalg.qr(s)
        if s.shape[1] and np.min(np.abs(np.diag(r))) < 1e-12 * max(1.0, np.abs(r).max()):
            raise InputError("rank-deficient basis")
        bases.append(q)
    V = np.hstack(bases)
    n = V.shape[0]
    if V.shape[1] != n:
        raise InputError(f"subspace dimensions add up to {V.shape[1]}, expected {n}")
    if np.linalg.cond(V) > 1e12:
        raise InputError("rank-deficient basis collection")
    cross = V.T @ V - np.eye(n)
    if np.max(np.abs(cross), initial=0.0) < 1e-12:
        return np.eye(n)
    Vinv = np.linalg.inv(V)
    G = Vinv.T @ Vinv
    return (G + G.T) / 2


def lifted_gram(gram) -> np.ndarray:
    """Extend ``G`` to ``blockdiag(G, 1)`` on the lifted space."""
    gram = np.asarray(gram, dtype=float)
    n = gram.shape[0]
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = gram
    out[n, n] = 1.0
    return out


def matrix_exponential(M, t: float = 1.0) -> np.ndarray:
    """``exp(M t)``; raises :class:`RangeError` if the result overflows."""
    M = _check_matrix(M)
    if not np.isfinite(t):
        raise InputError("t must be finite")
    with np.errstate(over="ignore", invalid="ignore"):
        out = linalg.expm(M * t)
    if not np.all(np.isfinite(out)):
        raise RangeError(f"exp(Mt) overflows at t={t}", time=t)
    return out
