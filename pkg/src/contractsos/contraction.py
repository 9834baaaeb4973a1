"""Contraction certificates on a compact ball.

One-sided Lipschitz constants come from the Demidovich test
``P Df(x) + Df(x)^T P <= 2 nu P`` evaluated on a lattice covering the ball,
plus a Lipschitz safety margin so that the reported ``certified_upper`` bounds
the supremum over the whole ball.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import matan
from .errors import DegenerateIdentificationError, DimensionError
from .informativity import noise_radius
from .matan import Metric, PartitionedSym
from .polyalg import PolyVec, second_derivative_bound

DEFAULT_GRID = 5


@dataclass(frozen=True)
class CompactSet:
    """Closed Euclidean ball ``center + B_radius``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ValueError("center must be a finite vector")
        if not self.radius > 0:
            raise ValueError("degenerate compact set: radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def n(self):
        return self.center.size

    @property
    def box_abs(self):
        """Per-coordinate bound on ``|x_i|`` over the ball."""
        return np.abs(self.center) + self.radius

    def contains(self, x, tol=1e-9):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.linalg.norm(x - self.center, axis=1) <= self.radius * (1 + tol)

    def project(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = x - self.center
        r = np.linalg.norm(d, axis=1, keepdims=True)
        scale = np.where(r > self.radius, self.radius / np.maximum(r, 1e-300), 1.0)
        return self.center + d * scale

    def spacing(self, per_axis):
        return 2.0 * self.radius / (per_axis - 1)

    def covering_radius(self, per_axis):
        """Distance from any point of the ball to the nearest grid point."""
        return self.spacing(per_axis) * np.sqrt(self.n) / 2.0

    def grid(self, per_axis=DEFAULT_GRID):
        """Lattice on the bounding box; points outside are projected onto the sphere.

        Projection is non-expansive, so the covering radius of the lattice
        carries over to the ball. Order is deterministic.
        """
        if per_axis < 2:
            raise ValueError("grid needs at least 2 points per axis")
        axis = np.linspace(-self.radius, self.radius, per_axis)
        mesh = np.stack(np.meshgrid(*([axis] * self.n), indexing="ij"), axis=-1).reshape(-1, self.n)
        pts = self.project(self.center + mesh)
        _, first = np.unique(np.round(pts, 12), axis=0, return_index=True)
        return pts[np.sort(first)]

    def sample(self, count, rng):
        """Uniform samples in the ball."""
        d = rng.standard_normal((count, self.n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.center + self.radius * d * rng.random((count, 1)) ** (1.0 / self.n)

    def to_json(self):
        return {"center": self.center.tolist(), "radius": self.radius}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["center"], dtype=float), float(obj["radius"]))


@dataclass(frozen=True)
class OsLipEstimate:
    value: float
    grid_spacing: float
    margin: float
    certified_upper: float
    argmax: tuple = ()


@dataclass(frozen=True)
class GridSup:
    value: float
    margin: float
    certified_upper: float


@dataclass(frozen=True)
class ContractivityCheck:
    passed: bool
    slack: float
    oslip: float
    rhs: float
    l_k: float
    schur_term: float


@dataclass(frozen=True)
class RateCertificate:
    mu_star: float
    ell: float
    ell_spectral: float
    ell_signed: float
    l_k: float
    schur_term: float
    kappa: float
    oslip_lse: float
    gamma_certified: float
    gamma_target: float | None
    passed: bool
    ell_mode: str = "eigen"

    def to_json(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _demidovich_values(f: PolyVec, M: Metric, X):
    J = f.jacobian().eval_many(X)
    S = M.sqrt @ J @ M.inv_sqrt
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    return np.linalg.eigvalsh(S)[:, -1]


def oslip(f: PolyVec, P, K: CompactSet, grid=DEFAULT_GRID) -> OsLipEstimate:
    """Local one-sided Lipschitz constant of ``f`` on ``K`` in the ``P`` metric.

    ``value`` is the largest Demidovich rate over the grid. ``margin`` is
    ``sqrt(kappa(P)) * L * h`` with ``L`` a coefficient bound on the variation
    of ``Df`` and ``h`` the grid covering radius.
    """
    if len(f) != f.dim:
        raise DimensionError("oslip needs a square vector field")
    if K.n != f.dim:
        raise DimensionError(f"compact set has dimension {K.n}, field has {f.dim}")
    M = Metric.of(P)
    X = K.grid(grid)
    vals = _demidovich_values(f, M, X)
    i = int(np.argmax(vals))
    lip = np.sqrt(M.condition) * second_derivative_bound(f, K.box_abs)
    margin = float(lip * K.covering_radius(grid))
    value = float(vals[i])
    return OsLipEstimate(value, K.spacing(grid), margin, value + margin, tuple(X[i].tolist()))


def oslip_at(f: PolyVec, P, X) -> float:
    """Largest Demidovich rate over the given points (no margin)."""
    return float(np.max(_demidovich_values(f, Metric.of(P), np.atleast_2d(X))))


def basis_jacobian_sup(b: PolyVec, K: CompactSet, grid=DEFAULT_GRID) -> GridSup:
    """``max ||Db(x)||_2`` over the grid, plus the Lipschitz grid margin."""
    J = b.jacobian().eval_many(K.grid(grid))
    value = float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2))))
    margin = float(second_derivative_bound(b, K.box_abs) * K.covering_radius(grid))
    return GridSup(value, margin, value + margin)


def l_k_bound(N: PartitionedSym, b: PolyVec, K: CompactSet, grid=DEFAULT_GRID) -> float:
    """``sqrt(-1 / lambda_max(N22)) * max_K ||Db||_2``."""
    lam = matan.lambda_max(N.a22)
    if not lam < 0:
        raise DegenerateIdentificationError(f"N22 is not negative definite (lambda_max = {lam:.3e})")
    return float(np.sqrt(-1.0 / lam) * basis_jacobian_sup(b, K, grid).certified_upper)


def robust_contractivity_check(N, b, P, K, gamma, phi_lse, grid=DEFAULT_GRID) -> ContractivityCheck:
    """Test ``osLip(phi_lse) < gamma - L_K sqrt(lambda_max(N|N22)) kappa(P)``.

    A pass certifies rate ``gamma`` for every parameter consistent with the data.
    """
    M = Metric.of(P)
    lk = l_k_bound(N, b, K, grid)
    s = noise_radius(N)
    rhs = gamma - lk * s * M.condition
    est = oslip(phi_lse, M, K, grid).certified_upper
    return ContractivityCheck(bool(est < rhs), float(rhs - est), est, float(rhs), lk, s)


def closed_loop_certificate(G, B, P, phi_lse, N, b, K, gamma=None, grid=DEFAULT_GRID,
                            ell_mode="eigen") -> RateCertificate:
    """Certified contraction rate of ``f + B G xbar`` for estimates ``xbar`` in ``K``.

    ``ell_mode="eigen"`` uses the largest eigenvalue modulus of ``BG``,
    ``"spectral"`` uses ``||BG||_2`` and ``"signed"`` the largest real part of
    an eigenvalue of ``BG``. All three values are reported.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[1] != G.shape[0] or B.shape[0] != G.shape[1]:
        raise DimensionError(f"B {B.shape} and G {G.shape} do not form a square product")
    M = Metric.of(P)
    BG = B @ G
    mu_star = matan.lognorm2_weighted(BG, M)
    root = np.sqrt(M.eig_max)
    ell = float(root * np.max(np.abs(np.linalg.eigvals(BG))))
    ell_spec = float(root * np.linalg.norm(BG, 2))
    ell_signed = float(root * np.max(np.linalg.eigvals(BG).real))
    lk = l_k_bound(N, b, K, grid)
    s = noise_radius(N)
    osl = oslip(phi_lse, M, K, grid).certified_upper
    modes = {"eigen": ell, "spectral": ell_spec, "signed": ell_signed}
    if ell_mode not in modes:
        raise ValueError(f"unknown ell_mode {ell_mode!r}")
    used = modes[ell_mode]
    gcert = float(mu_star + s * lk * M.condition + used + osl)
    passed = gamma is not None and gcert < gamma
    return RateCertificate(mu_star, ell, ell_spec, ell_signed, lk, s, M.condition, osl, gcert,
                           None if gamma is None else float(gamma), bool(passed), ell_mode)


def deviation_envelope(d0, gamma, t):
    """``d0 * exp(gamma * t)``."""
    return d0 * np.exp(gamma * np.asarray(t, dtype=float))
