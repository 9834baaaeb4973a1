"""Matrix-analysis kernel.

Symmetric eigen-extremes, weighted norms, weighted logarithmic norms, Schur
complements, pseudo-inverses and quadratic-matrix-inequality membership.

A symmetric ``S`` counts as positive semidefinite when
``lambda_min(S) >= -PSD_RTOL * max(1, ||S||_2)``; every module uses this test.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AsymmetryError, DimensionError, NotPositiveDefiniteError

PSD_RTOL = 1e-9
SYM_TOL = 1e-10
PD_RTOL = 1e-12


def _square(A, name="matrix"):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    return A


def symmetrize(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + A.T)


def check_symmetric(S, tol=SYM_TOL):
    S = _square(S)
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if np.max(np.abs(S - S.T), initial=0.0) > tol * scale:
        raise AsymmetryError("matrix is not symmetric within tolerance")
    return S


def eig_extremes(S):
    """``(lambda_min, lambda_max)`` of a symmetric matrix."""
    S = symmetrize(check_symmetric(S))
    w = np.linalg.eigvalsh(S)
    return float(w[0]), float(w[-1])


def lambda_max(S):
    return eig_extremes(S)[1]


def lambda_min(S):
    return eig_extremes(S)[0]


def is_psd(S, rtol=PSD_RTOL):
    S = symmetrize(_square(S))
    if S.size == 0:
        return True
    w = np.linalg.eigvalsh(S)
    return bool(w[0] >= -rtol * max(1.0, float(np.max(np.abs(w)))))


def pinv(M):
    """Moore-Penrose pseudo-inverse."""
    return np.linalg.pinv(np.asarray(M, dtype=float))


@dataclass(frozen=True)
class Metric:
    """A symmetric positive-definite weighting matrix with cached square roots."""

    P: np.ndarray
    sqrt: np.ndarray
    inv_sqrt: np.ndarray
    eig_min: float
    eig_max: float

    @classmethod
    def of(cls, P):
        if isinstance(P, Metric):
            return P
        P = symmetrize(check_symmetric(P))
        w, V = np.linalg.eigh(P)
        if w[0] <= PD_RTOL * max(abs(w[-1]), 0.0) or w[0] <= 0.0:
            raise NotPositiveDefiniteError(f"metric is not positive definite (lambda_min = {w[0]:.3e})")
        sqrt = (V * np.sqrt(w)) @ V.T
        inv_sqrt = (V / np.sqrt(w)) @ V.T
        return cls(P, sqrt, inv_sqrt, float(w[0]), float(w[-1]))

    @property
    def n(self):
        return self.P.shape[0]

    @property
    def condition(self):
        return self.eig_max / self.eig_min


def weighted_norm(x, P, p=2):
    """``||P^{1/2} x||_p`` for ``p`` in ``{1, 2, inf}``."""
    M = Metric.of(P)
    x = np.asarray(x, dtype=float)
    if x.shape != (M.n,):
        raise DimensionError(f"vector of shape {x.shape} does not match metric of size {M.n}")
    if p not in (1, 2, np.inf, "inf"):
        raise ValueError(f"unsupported norm index {p!r}")
    return float(np.linalg.norm(M.sqrt @ x, ord=np.inf if p == "inf" else p))


def lognorm2_weighted(A, P):
    """Logarithmic norm of ``A`` induced by ``||P^{1/2} . ||_2``.

    Computed as ``lambda_max`` of the symmetric part of ``P^{1/2} A P^{-1/2}``,
    which is similar to ``(P A P^{-1} + A^T) / 2``.
    """
    M = Metric.of(P)
    A = _square(A)
    if A.shape != M.P.shape:
        raise DimensionError(f"matrix {A.shape} does not match metric {M.P.shape}")
    S = symmetrize(M.sqrt @ A @ M.inv_sqrt)
    return float(np.linalg.eigvalsh(S)[-1])


def weighted_sym_part(A, P):
    """Symmetric matrix similar to ``(P A P^{-1} + A^T)/2`` (same spectrum)."""
    M = Metric.of(P)
    return symmetrize(M.sqrt @ _square(A) @ M.inv_sqrt)


@dataclass(frozen=True)
class PartitionedSym:
    """Symmetric ``(n+m) x (n+m)`` matrix split after row/column ``n``."""

    A: np.ndarray
    n: int

    def __post_init__(self):
        A = check_symmetric(self.A)
        if not 0 < self.n < A.shape[0]:
            raise DimensionError(f"split index {self.n} invalid for size {A.shape[0]}")
        object.__setattr__(self, "A", symmetrize(A))

    @property
    def m(self):
        return self.A.shape[0] - self.n

    @property
    def a11(self):
        return self.A[: self.n, : self.n]

    @property
    def a12(self):
        return self.A[: self.n, self.n:]

    @property
    def a21(self):
        return self.A[self.n:, : self.n]

    @property
    def a22(self):
        return self.A[self.n:, self.n:]

    def to_json(self):
        return {"matrix": self.A.tolist(), "split": self.n}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["matrix"], dtype=float), int(obj["split"]))


def schur_complement(A: PartitionedSym):
    """``A11 - A12 A22^+ A21``."""
    return symmetrize(A.a11 - A.a12 @ pinv(A.a22) @ A.a21)


def qmi_form(Z, A: PartitionedSym):
    """``[I; Z]^T A [I; Z]`` for ``Z`` of shape ``(m, n)``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape != (A.m, A.n):
        raise DimensionError(f"Z has shape {Z.shape}, expected {(A.m, A.n)}")
    S = np.vstack([np.eye(A.n), Z])
    return symmetrize(S.T @ A.A @ S)


def qmi_membership(Z, A: PartitionedSym, rtol=1e-9):
    """Whether ``Z`` lies in the QMI set of ``A`` (with tolerance ``rtol * ||A||``)."""
    F = qmi_form(Z, A)
    tol = rtol * float(np.linalg.norm(A.A, 2))
    return bool(np.linalg.eigvalsh(F)[0] >= -tol)
