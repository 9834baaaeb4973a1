"""Fixed-gain controller synthesis by a sampled constrained SOS program.

Decision variables are ``mu``, ``a`` and the upper triangle of a symmetric
``Gamma``. The program minimizes ``mu`` subject to

* the eigenvalue condition ``x^T (mu I - H(Gamma)) x >= 0`` where ``H`` is
  the symmetric form of ``Gamma`` in the ``P`` metric,
* the density condition
  ``p div(a phi + a Gamma x) - alpha grad(p) . (a phi + a Gamma x) >= delta``
  on a grid of ``K``,
* optionally ``mu <= (gamma - varsigma) / beta - delta``,
* ``a_min <= a <= a_max`` and ``|Gamma_ij| <= M``.

The gain is ``G = B^+ Gamma / a`` and the certified rate ``beta mu + varsigma``.
``gamma_exact_state`` is the rate ``mu(BG) + varsigma`` of the closed loop under
exact-state feedback, which does not rely on the ``beta`` scaling.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import matan
from .contraction import DEFAULT_GRID, CompactSet, basis_jacobian_sup, oslip
from .errors import DegenerateIdentificationError, DimensionError, InfeasibleError, UnverifiedError
from .informativity import schur_lambda_max
from .matan import Metric, PartitionedSym
from .polyalg import Polynomial, PolyVec, linear_field

DELTA = 1e-6
A_BOUNDS = (1e-3, 1e3)


@dataclass(frozen=True)
class SynthesisProblem:
    P: np.ndarray
    K: CompactSet
    B: np.ndarray
    phi_lse: PolyVec
    N: PartitionedSym
    basis: PolyVec
    gamma_target: float | None = None
    p_poly: Polynomial | None = None
    alpha: float = 1000.0
    M: float = 10.0
    grid: int = DEFAULT_GRID
    delta: float = DELTA
    a_bounds: tuple = A_BOUNDS
    seed: int = 0

    def __post_init__(self):
        P = Metric.of(self.P).P
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        n = P.shape[0]
        if B.shape[0] != n or self.K.n != n or self.phi_lse.dim != n or len(self.phi_lse) != n:
            raise DimensionError("P, B, K and phi_lse must share the state dimension")
        if np.linalg.matrix_rank(B) < B.shape[1]:
            raise ValueError("B must have full column rank")
        if not (self.alpha > 0 and self.M > 0):
            raise ValueError("alpha and M must be positive")
        p = self.p_poly if self.p_poly is not None else Polynomial.sum_of_squares(n)
        if p.dim != n:
            raise DimensionError("p_poly dimension does not match the state")
        if np.min(p.eval_many(self.K.grid(self.grid))) <= 0:
            raise ValueError("p_poly must be positive on K")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "p_poly", p)

    @property
    def n(self):
        return self.P.shape[0]

    def to_json(self):
        return {
            "P": self.P.tolist(),
            "K": self.K.to_json(),
            "B": self.B.tolist(),
            "phi_lse": self.phi_lse.to_json(),
            "N": self.N.to_json(),
            "basis": self.basis.to_json(),
            "gamma_target": self.gamma_target,
            "p_poly": self.p_poly.to_json(),
            "alpha": self.alpha,
            "M": self.M,
            "grid": self.grid,
            "delta": self.delta,
            "a_bounds": list(self.a_bounds),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            P=np.array(obj["P"], dtype=float),
            K=CompactSet.from_json(obj["K"]),
            B=np.array(obj["B"], dtype=float),
            phi_lse=PolyVec.from_json(obj["phi_lse"]),
            N=PartitionedSym.from_json(obj["N"]),
            basis=PolyVec.from_json(obj["basis"]),
            gamma_target=obj.get("gamma_target"),
            p_poly=Polynomial.from_json(obj["p_poly"]),
            alpha=float(obj["alpha"]),
            M=float(obj["M"]),
            grid=int(obj["grid"]),
            delta=float(obj["delta"]),
            a_bounds=tuple(obj["a_bounds"]),
            seed=int(obj["seed"]),
        )


@dataclass
class SynthesisResult:
    Gamma: np.ndarray
    a: float
    mu: float
    G: np.ndarray
    beta: float
    varsigma: float
    gamma_achieved: float
    gamma_exact_state: float = float("nan")
    verified: bool = False
    constraint_report: dict = field(default_factory=dict)
    restart: int = -1
    mode: str = "relaxed"

    def to_json(self):
        return {
            "Gamma": self.Gamma.tolist(),
            "a": self.a,
            "mu": self.mu,
            "G": self.G.tolist(),
            "beta": self.beta,
            "varsigma": self.varsigma,
            "gamma_achieved": self.gamma_achieved,
            "gamma_exact_state": self.gamma_exact_state,
            "verified": self.verified,
            "constraint_report": self.constraint_report,
            "restart": self.restart,
            "mode": self.mode,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            Gamma=np.array(obj["Gamma"], dtype=float),
            a=float(obj["a"]),
            mu=float(obj["mu"]),
            G=np.atleast_2d(np.array(obj["G"], dtype=float)),
            beta=float(obj["beta"]),
            varsigma=float(obj["varsigma"]),
            gamma_achieved=float(obj["gamma_achieved"]),
            gamma_exact_state=float(obj.get("gamma_exact_state", "nan")),
            verified=bool(obj["verified"]),
            constraint_report=obj.get("constraint_report", {}),
            restart=int(obj.get("restart", -1)),
            mode=obj.get("mode", "relaxed"),
        )


# certificate ingredients

def beta(P) -> float:
    return 1.0 + math.sqrt(Metric.of(P).eig_max)


def varsigma(N: PartitionedSym, b: PolyVec, K: CompactSet, phi_lse: PolyVec, P, grid=DEFAULT_GRID) -> float:
    """Noise-induced expansion plus ``osLip_K(phi_lse)``."""
    lam22 = matan.lambda_max(N.a22)
    if not lam22 < 0:
        raise DegenerateIdentificationError(f"N22 is not negative definite (lambda_max = {lam22:.3e})")
    ratio = -schur_lambda_max(N) / lam22
    sup = basis_jacobian_sup(b, K, grid).certified_upper
    return float(math.sqrt(ratio) * sup + oslip(phi_lse, P, K, grid).certified_upper)


def weighted_gamma(Gamma, P):
    """Symmetric matrix similar to ``(P Gamma P^{-1} + Gamma^T) / 2``."""
    return matan.weighted_sym_part(Gamma, P)


def sos1_residual(Gamma, mu, P, x) -> float:
    x = np.asarray(x, dtype=float)
    H = weighted_gamma(Gamma, P)
    return float(mu * (x @ x) - x @ H @ x)


def sos2_polynomial(Gamma, a, phi_lse: PolyVec, p_poly: Polynomial, alpha) -> Polynomial:
    """``p div(F) - alpha grad(p) . F`` with ``F = a phi + a Gamma x``."""
    F = (phi_lse + linear_field(Gamma)).scale(a)
    return p_poly * F.divergence() - p_poly.gradient().dot(F) * alpha


def sos2_residual(Gamma, a, phi_lse, p_poly, alpha, x) -> float:
    return sos2_polynomial(Gamma, a, phi_lse, p_poly, alpha)(x)


# linear structure of the program

def _triu(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


def _unit_sym(n, i, j):
    E = np.zeros((n, n))
    E[i, j] = E[j, i] = 1.0
    return E


def gamma_from_vec(g, n):
    G = np.zeros((n, n))
    for v, (i, j) in zip(g, _triu(n)):
        G[i, j] = G[j, i] = v
    return G


def vec_from_gamma(Gamma):
    return np.array([Gamma[i, j] for i, j in _triu(Gamma.shape[0])])


def spanning_directions(n):
    """Unit vectors ``e_i`` and ``(e_i +- e_j)/sqrt 2``."""
    dirs = [np.eye(n)[i] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            for s in (1.0, -1.0):
                d = np.zeros(n)
                d[i], d[j] = 1.0, s
                dirs.append(d / math.sqrt(2.0))
    return np.array(dirs)


def _sos1_rows(X, P):
    """Rows ``r`` with residual ``r . [mu, a, g]`` at each point."""
    n = X.shape[1]
    Hs = [weighted_gamma(_unit_sym(n, i, j), P) for i, j in _triu(n)]
    rows = np.zeros((X.shape[0], 2 + len(Hs)))
    rows[:, 0] = np.einsum("ij,ij->i", X, X)
    for m, H in enumerate(Hs):
        rows[:, 2 + m] = -np.einsum("ij,jk,ik->i", X, H, X)
    return rows


def _sos2_affine(problem: SynthesisProblem, X):
    """``(c0, C)`` such that ``sos2 / a = c0 + C @ g`` at each point."""
    n = problem.n
    p = problem.p_poly.eval_many(X)
    gp = problem.p_poly.gradient().eval_many(X)
    phi = problem.phi_lse.eval_many(X)
    div = problem.phi_lse.divergence().eval_many(X)
    alpha = problem.alpha
    c0 = p * div - alpha * np.einsum("ij,ij->i", gp, phi)
    C = np.zeros((X.shape[0], n * (n + 1) // 2))
    for m, (i, j) in enumerate(_triu(n)):
        if i == j:
            C[:, m] = p - alpha * gp[:, i] * X[:, i]
        else:
            C[:, m] = -alpha * (gp[:, i] * X[:, j] + gp[:, j] * X[:, i])
    return c0, C


def _lift_mu(mu, Gamma, P, delta):
    return max(float(mu), matan.lambda_max(weighted_gamma(Gamma, P)) + delta)


def _initial_gammas(n, M, seed):
    rng = np.random.default_rng(seed)
    R = rng.uniform(-1.0, 1.0, (n, n))
    R = np.clip(0.25 * M * (R + R.T), -M, M)
    return [-np.eye(n), -0.1 * np.eye(n), -0.5 * M * np.eye(n), R, np.zeros((n, n))]


def synthesize(problem: SynthesisProblem, verify_result=True) -> SynthesisResult:
    """Solve the program from five deterministic restarts and audit the best solution.

    Raises
    ------
    InfeasibleError
        No restart satisfied the sampled constraints.
    UnverifiedError
        The dense-grid audit found a negative residual; the result is attached.
    """
    n = problem.n
    Pm = Metric.of(problem.P)
    delta = problem.delta
    X = problem.K.grid(problem.grid)
    dirs = np.vstack([X, spanning_directions(n)])
    A1 = _sos1_rows(dirs, Pm)
    c0, C = _sos2_affine(problem, X)
    A2 = np.hstack([np.zeros((C.shape[0], 2)), C])
    scale2 = np.maximum(np.max(np.abs(A2), axis=1), np.abs(c0))
    scale2 = np.where(scale2 > 0, scale2, 1.0)
    A2s, b2s = A2 / scale2[:, None], (c0 - delta) / scale2
    scale1 = np.maximum(np.max(np.abs(A1), axis=1), 1.0)
    A1s, b1s = A1 / scale1[:, None], -delta / scale1

    bet = beta(Pm)
    vs = varsigma(problem.N, problem.basis, problem.K, problem.phi_lse, Pm, problem.grid)
    cons = [
        {"type": "ineq", "fun": lambda z: A1s @ z + b1s, "jac": lambda z: A1s},
        {"type": "ineq", "fun": lambda z: A2s @ z + b2s, "jac": lambda z: A2s},
    ]
    mu_cap = None
    if problem.gamma_target is not None:
        mu_cap = (problem.gamma_target - vs) / bet - delta
        row = np.zeros(2 + C.shape[1])
        row[0] = -1.0
        cons.append({"type": "ineq", "fun": lambda z: np.array([mu_cap - z[0]]), "jac": lambda z: row[None, :]})
    nv = C.shape[1]
    bounds = [(None, None), problem.a_bounds] + [(-problem.M, problem.M)] * nv

    best = None
    for idx, G0 in enumerate(_initial_gammas(n, problem.M, problem.seed)):
        z0 = np.concatenate([[matan.lambda_max(weighted_gamma(G0, Pm)), 1.0], vec_from_gamma(G0)])
        res = minimize(lambda z: z[0], z0, jac=lambda z: np.eye(1, z.size, 0)[0], method="SLSQP",
                       bounds=bounds, constraints=cons, options={"maxiter": 500, "ftol": 1e-12})
        z = res.x
        g = np.clip(z[2:], -problem.M, problem.M)
        a = float(np.clip(z[1], *problem.a_bounds))
        Gamma = gamma_from_vec(g, n)
        mu = _lift_mu(z[0], Gamma, Pm, delta)
        s2 = c0 + C @ g
        ok = np.min(s2) >= delta * (1 - 1e-6) - 1e-9 * np.max(np.abs(scale2))
        if mu_cap is not None:
            ok = ok and mu <= mu_cap + 1e-9
        if ok and (best is None or mu < best[0] - 1e-12):
            best = (mu, a, Gamma, idx)
    if best is None:
        raise InfeasibleError("no restart produced a certificate on the sampled grid")
    mu, a, Gamma, idx = best
    G = matan.pinv(problem.B) @ Gamma / a
    exact = matan.lognorm2_weighted(problem.B @ G, Pm) + vs
    result = SynthesisResult(Gamma, a, float(mu), G, bet, vs, float(bet * mu + vs), float(exact), restart=idx,
                             mode="relaxed" if problem.gamma_target is None else "targeted")
    if verify_result:
        report = verify(result, problem)
        result.constraint_report = report
        result.verified = report["verified"]
        if not result.verified:
            raise UnverifiedError("dense-grid audit failed", result)
    return result


def synthesize_max_contraction(problem: SynthesisProblem, verify_result=True) -> SynthesisResult:
    """Program without the rate constraint; reports the best certified rate."""
    return synthesize(dataclasses.replace(problem, gamma_target=None), verify_result)


def dense_grid_size(per_axis, n, factor=10):
    """Smallest nested refinement with at least ``factor`` times as many lattice points."""
    m = 1
    while ((per_axis - 1) * m + 1) ** n < factor * per_axis ** n:
        m += 1
    return (per_axis - 1) * m + 1


def verify(result: SynthesisResult, problem: SynthesisProblem, factor=10, random_points=10_000) -> dict:
    """Independent audit of a synthesis result.

    Re-evaluates both residuals on a refined grid plus uniform random points
    in ``K``, checks the eigenvalue condition exactly, and recomputes the
    certified rate from scratch.
    """
    n = problem.n
    Pm = Metric.of(problem.P)
    dense = dense_grid_size(problem.grid, n, factor)
    rng = np.random.default_rng(np.random.SeedSequence([problem.seed, 0x5EED]))
    X = np.vstack([problem.K.grid(dense), problem.K.sample(random_points, rng)])
    Gamma = np.asarray(result.Gamma, dtype=float)
    H = weighted_gamma(Gamma, Pm)

    r1 = result.mu * np.einsum("ij,ij->i", X, X) - np.einsum("ij,jk,ik->i", X, H, X)
    gram = float(np.linalg.eigvalsh(result.mu * np.eye(n) - H)[0])
    poly2 = sos2_polynomial(Gamma, result.a, problem.phi_lse, problem.p_poly, problem.alpha)
    r2 = poly2.eval_many(X)

    def entry(r):
        i = int(np.argmin(r))
        return {"min_residual": float(r[i]), "argmin": X[i].tolist(), "points": int(len(r)),
                "grid_per_axis": dense}

    vs = varsigma(problem.N, problem.basis, problem.K, problem.phi_lse, Pm, problem.grid)
    gamma_re = beta(Pm) * result.mu + vs
    gamma_ok = abs(gamma_re - result.gamma_achieved) <= 1e-6
    bounds_ok = bool(np.max(np.abs(Gamma)) <= problem.M * (1 + 1e-9)
                     and problem.a_bounds[0] * (1 - 1e-9) <= result.a <= problem.a_bounds[1] * (1 + 1e-9))
    gain_ok = bool(np.allclose(result.G, matan.pinv(problem.B) @ Gamma / result.a, rtol=1e-9, atol=1e-12))
    report = {
        "sos1": entry(r1),
        "sos2": entry(r2),
        "sos1_gram_min_eig": gram,
        "lognorm_gamma": matan.lognorm2_weighted(Gamma, Pm),
        "gamma_recomputed": float(gamma_re),
        "gamma_exact_state_recomputed": float(matan.lognorm2_weighted(problem.B @ result.G, Pm) + vs),
        "gamma_match": bool(gamma_ok),
        "bounds_ok": bounds_ok,
        "gain_consistent": gain_ok,
    }
    if problem.gamma_target is not None:
        report["target_met"] = bool(result.gamma_achieved <= problem.gamma_target + 1e-9)
    report["verified"] = bool(
        report["sos1"]["min_residual"] >= 0
        and report["sos2"]["min_residual"] >= 0
        and gram >= 0
        and gamma_ok
        and bounds_ok
        and gain_ok
        and report.get("target_met", True)
    )
    return report
