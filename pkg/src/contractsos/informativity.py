"""Set-membership identification from noisy derivative samples.

Samples ``y_i = theta^T b(x_i) + w_i`` are stacked into ``Y`` (n x T) and
``Phi`` (k x T). With a noise model ``Pi`` such that ``W^T`` lies in the QMI
set of ``Pi``, every parameter consistent with the data lies in the QMI set of

    N = [[I, Y], [0, -Phi]] Pi [[I, Y], [0, -Phi]]^T,

whose centre ``-N12 N22^+`` (transposed) is the least-squares estimate.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import matan
from .errors import DimensionError, NoiseModelError, SamplingError
from .matan import PartitionedSym
from .polyalg import PolyVec, combine, monomial_basis


class RankDeficiencyWarning(UserWarning):
    """``Phi`` does not have rank k, so the parameter set is unbounded."""


@dataclass(frozen=True)
class NoiseModel:
    Pi: PartitionedSym

    @property
    def n(self):
        return self.Pi.n

    @property
    def T(self):
        return self.Pi.m


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("sample has non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class DataBundle:
    samples: tuple
    basis: PolyVec
    Y: np.ndarray
    Phi: np.ndarray
    N: PartitionedSym
    theta_lse: np.ndarray
    phi_lse: PolyVec
    rank_phi: int = 0
    rank_deficient: bool = False
    diagnostics: dict = field(default_factory=dict)


def validate_noise_model(Pi, n=None) -> NoiseModel:
    """Check ``Pi22 < 0``, ``Pi | Pi22 >= 0`` and ``T >= n``."""
    if not isinstance(Pi, PartitionedSym):
        if n is None:
            raise ValueError("split index n is required for a raw matrix")
        Pi = PartitionedSym(np.asarray(Pi, dtype=float), n)
    if Pi.m < Pi.n:
        raise NoiseModelError(f"need T >= n, got T={Pi.m}, n={Pi.n}")
    w22 = np.linalg.eigvalsh(Pi.a22)
    if w22[-1] >= -matan.PD_RTOL * max(1.0, float(np.max(np.abs(w22)))):
        raise NoiseModelError("noise block not negative definite")
    if not matan.is_psd(matan.schur_complement(Pi)):
        raise NoiseModelError("Schur complement of the noise model is not positive semidefinite")
    return NoiseModel(Pi)


def energy_noise_model(epsilon: float, n: int, T: int) -> NoiseModel:
    """``Pi = diag(eps^2 T I_n, -I_T)``: total noise energy at most ``eps^2 T``."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    Pi = np.zeros((n + T, n + T))
    Pi[:n, :n] = epsilon ** 2 * T * np.eye(n)
    Pi[n:, n:] = -np.eye(T)
    return validate_noise_model(PartitionedSym(Pi, n))


def assemble(samples, basis: PolyVec):
    """Data matrices ``(Y, Phi)``; column ``i`` holds ``y_i`` and ``b(x_i)``."""
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample")
    X = np.array([s.x for s in samples], dtype=float)
    if X.ndim != 2 or X.shape[1] != basis.dim:
        raise DimensionError(f"sample states must have dimension {basis.dim}")
    Y = np.array([s.y for s in samples], dtype=float)
    if Y.ndim != 2 or Y.shape[1] != basis.dim:
        raise DimensionError(f"sample outputs must have dimension {basis.dim}")
    return Y.T.copy(), basis.eval_many(X).T.copy()


def build_N(Y, Phi, noise: NoiseModel) -> PartitionedSym:
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    n, T = Y.shape
    k = Phi.shape[0]
    if Phi.shape[1] != T:
        raise DimensionError(f"Y has {T} columns but Phi has {Phi.shape[1]}")
    if noise.n != n or noise.T != T:
        raise DimensionError(f"noise model is ({noise.n}, {noise.T}), data are ({n}, {T})")
    S = np.block([[np.eye(n), Y], [np.zeros((k, n)), -Phi]])
    return PartitionedSym(matan.symmetrize(S @ noise.Pi.A @ S.T), n)


def least_squares_estimate(N: PartitionedSym, basis: PolyVec):
    """``theta_lse = (-N12 N22^+)^T`` and the field ``phi_lse = theta_lse^T b``."""
    if N.m != len(basis):
        raise DimensionError(f"N has parameter block {N.m} but basis has {len(basis)} entries")
    theta = (-N.a12 @ matan.pinv(N.a22)).T
    return theta, combine(theta, basis)


def consistent_membership(theta, N: PartitionedSym) -> bool:
    return matan.qmi_membership(theta, N)


def schur_lambda_max(N: PartitionedSym) -> float:
    """``lambda_max(N | N22)`` with round-off below the PSD tolerance of ``N`` set to zero."""
    lam = matan.lambda_max(matan.schur_complement(N))
    floor = matan.PSD_RTOL * max(1.0, float(np.linalg.norm(N.A, 2)))
    return 0.0 if lam <= floor else lam


def noise_radius(N: PartitionedSym) -> float:
    """``sqrt(lambda_max(N | N22))``, clipped at zero."""
    return float(np.sqrt(schur_lambda_max(N)))


def sample_consistent_parameters(N: PartitionedSym, count: int, seed=0, max_rejections=100_000):
    """Draw ``count`` members of the QMI set of ``N`` by rejection.

    Proposals are ``theta_lse + L D R`` with ``L = (-N22)^{-1/2}``,
    ``R = (N|N22)^{1/2}`` and ``D`` uniform in a Frobenius ball. The radius
    starts at 1 (all accepted) and doubles after each fully accepted batch,
    up to ``sqrt(min(k, n))`` where the ball covers the whole set.
    """
    rng = np.random.default_rng(seed)
    k, n = N.m, N.n
    center = (-N.a12 @ matan.pinv(N.a22)).T
    w, V = np.linalg.eigh(-N.a22)
    inv = np.where(w > matan.PD_RTOL * max(1.0, abs(w[-1])), 1.0 / np.sqrt(np.clip(w, 1e-300, None)), 0.0)
    L = (V * inv) @ V.T
    ws, Vs = np.linalg.eigh(matan.schur_complement(N))
    R = (Vs * np.sqrt(np.clip(ws, 0.0, None))) @ Vs.T
    r_cap = np.sqrt(min(k, n))
    radius = 1.0
    out, rejections, batch = [], 0, 32
    while len(out) < count:
        accepted_all = True
        for _ in range(batch):
            D = rng.standard_normal((k, n))
            D *= radius * rng.random() ** (1.0 / D.size) / max(np.linalg.norm(D), 1e-300)
            theta = center + L @ D @ R
            if consistent_membership(theta, N):
                out.append(theta)
                if len(out) == count:
                    break
            else:
                accepted_all = False
                rejections += 1
                if rejections >= max_rejections:
                    raise SamplingError(f"gave up after {rejections} rejections")
        if accepted_all and radius < r_cap:
            radius = min(2.0 * radius, r_cap)
    return out


def generate_dataset(theta_true, basis: PolyVec, points, epsilon: float, seed=0):
    """Noisy samples of ``theta_true^T b`` with noise uniform in the ``epsilon`` ball.

    Returns ``(samples, noise_model)`` where the noise model is the energy bound,
    which the drawn noise satisfies by construction.
    """
    theta_true = np.asarray(theta_true, dtype=float)
    X = np.atleast_2d(np.asarray(points, dtype=float))
    T, n = X.shape
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    rng = np.random.default_rng(seed)
    clean = basis.eval_many(X) @ theta_true
    d = rng.standard_normal((T, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    W = epsilon * d * rng.random((T, 1)) ** (1.0 / n)
    samples = tuple(Sample(x, y) for x, y in zip(X, clean + W))
    return samples, energy_noise_model(epsilon, n, T)


def identify(samples, basis: PolyVec, noise: NoiseModel) -> DataBundle:
    """Run assembly, N construction and least squares; warn when ``rank(Phi) < k``."""
    Y, Phi = assemble(samples, basis)
    N = build_N(Y, Phi, noise)
    theta, phi = least_squares_estimate(N, basis)
    rank = int(np.linalg.matrix_rank(Phi))
    deficient = rank < len(basis)
    if deficient:
        warnings.warn(f"Phi has rank {rank} < k = {len(basis)}; consistent set is unbounded",
                      RankDeficiencyWarning, stacklevel=2)
    sv = np.linalg.svd(Phi, compute_uv=False)
    diagnostics = {
        "n": int(Y.shape[0]),
        "k": len(basis),
        "T": int(Y.shape[1]),
        "rank_phi": rank,
        "rank_deficient": deficient,
        "phi_singular_min": float(sv[-1]) if len(sv) else 0.0,
        "phi_singular_max": float(sv[0]) if len(sv) else 0.0,
        "lambda_max_N22": matan.lambda_max(N.a22),
        "lambda_max_schur": matan.lambda_max(matan.schur_complement(N)),
    }
    return DataBundle(tuple(samples), basis, Y, Phi, N, theta, phi, rank, deficient, diagnostics)


# dataset file format

def basis_from_json(obj) -> PolyVec:
    if isinstance(obj, dict):
        return monomial_basis(int(obj["dim"]), int(obj["degree"]), bool(obj.get("include_constant", True)))
    return PolyVec.from_json(obj)


def noise_from_json(obj, n: int, T: int) -> NoiseModel:
    kind = obj.get("type", "energy")
    if kind == "energy":
        return energy_noise_model(float(obj["epsilon"]), n, T)
    if kind == "matrix":
        return validate_noise_model(PartitionedSym(np.array(obj["matrix"], dtype=float), n))
    raise ValueError(f"unknown noise model type {kind!r}")


def dataset_from_json(obj):
    """Parse ``{"basis", "samples", "noise"}`` into ``(samples, basis, noise)``."""
    basis = basis_from_json(obj["basis"])
    samples = tuple(Sample(s["x"], s["y"]) for s in obj["samples"])
    noise = noise_from_json(obj["noise"], basis.dim, len(samples))
    return samples, basis, noise


def dataset_to_json(samples, basis_spec, epsilon: float):
    return {
        "basis": basis_spec,
        "samples": [{"x": s.x.tolist(), "y": s.y.tolist()} for s in samples],
        "noise": {"type": "energy", "epsilon": epsilon},
    }
