"""Closed-loop simulation of the planar UAV in wind and empirical certificate checks.

State is ``(x, y, xdot, ydot)``; the wind ``v_w`` is a polynomial in ``x``.
Integration is classical RK4 with the control held over each step.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import matan
from .contraction import CompactSet, deviation_envelope
from .errors import DimensionError
from .polyalg import Polynomial, PolyVec

UAV_B = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
UAV_X0 = np.array([10.0, 10.0, 1.0, 0.1])
DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class UavParams:
    c_d: float = 1e-2
    c_w: float = 1e-2
    wind: Polynomial = field(default_factory=lambda: Polynomial(1))

    def __post_init__(self):
        if self.wind.dim != 1:
            raise DimensionError("wind must be a polynomial in one variable")
        if not (math.isfinite(self.c_d) and math.isfinite(self.c_w)):
            raise ValueError("non-finite UAV coefficients")
        coefs = np.zeros(self.wind.degree + 1 if not self.wind.is_zero() else 1)
        for (e,), c in self.wind.terms.items():
            coefs[e] = c
        if not np.all(np.isfinite(coefs)):
            raise ValueError("non-finite wind coefficients")
        object.__setattr__(self, "_wind_coefs", tuple(coefs[::-1].tolist()))

    @classmethod
    def constant_wind(cls, v, c_d=1e-2, c_w=1e-2):
        return cls(c_d, c_w, Polynomial.constant(1, v))

    def wind_at(self, x: float) -> float:
        acc = 0.0
        for c in self._wind_coefs:
            acc = acc * x + c
        return acc

    def to_json(self):
        return {"c_d": self.c_d, "c_w": self.c_w, "wind": self.wind.to_json()}


def uav_field(state, u, params: UavParams) -> np.ndarray:
    """``(xdot, ydot, c_d (xdot^2 + (ydot + v_w)^2) + u1, c_w v_w + u2)``."""
    x, _, xd, yd = state
    v = params.wind_at(x)
    return np.array([xd, yd, params.c_d * (xd * xd + (yd + v) ** 2) + u[0], params.c_w * v + u[1]])


def uav_polyvec(params: UavParams) -> PolyVec:
    """The uncontrolled UAV drift as a polynomial field in four variables."""
    v = Polynomial(4, {(e, 0, 0, 0): c for (e,), c in params.wind.terms.items()})
    xd, yd = Polynomial.variable(4, 2), Polynomial.variable(4, 3)
    return PolyVec([xd, yd, (xd * xd + (yd + v) ** 2) * params.c_d, v * params.c_w])


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    diverged: bool = False

    def __len__(self):
        return len(self.times)


def integrate(field, x0, dt, horizon, controller=None) -> Trajectory:
    """Fixed-step RK4.

    ``field(x)`` when ``controller`` is None, else ``field(x, u)`` with
    ``u = controller(step, x)`` held constant over the step. Integration stops
    at the first non-finite or exploding state and flags the trajectory.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if horizon < dt:
        raise ValueError("horizon must be at least dt")
    steps = int(round(horizon / dt))
    x = np.asarray(x0, dtype=float).copy()
    if controller is None:
        f = lambda z, u: field(z)
        ctrl = lambda k, z: np.zeros(0)
    else:
        f, ctrl = field, controller
    times, states, controls = [0.0], [x.copy()], []
    diverged = False
    for k in range(steps):
        u = np.asarray(ctrl(k, x), dtype=float)
        controls.append(u)
        k1 = f(x, u)
        k2 = f(x + 0.5 * dt * k1, u)
        k3 = f(x + 0.5 * dt * k2, u)
        k4 = f(x + dt * k3, u)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            diverged = True
            break
        times.append((k + 1) * dt)
        states.append(x.copy())
    if len(controls) < len(states):
        controls.append(np.asarray(ctrl(len(states) - 1, states[-1]), dtype=float))
    return Trajectory(np.array(times), np.array(states), np.array(controls[: len(states)]), diverged)


@dataclass(frozen=True)
class SimConfig:
    x0: np.ndarray = field(default_factory=lambda: UAV_X0.copy())
    dt: float = 1e-3
    horizon: float = 10.0
    gain: np.ndarray | None = None
    estimate_error_radius: float = 0.0
    seed: int = 0
    realizations: int = 20
    K: CompactSet | None = None
    wind_range: tuple = (-1.0, 1.0)
    csv_stride: int = 10

    def __post_init__(self):
        if not self.dt > 0 or self.horizon < self.dt:
            raise ValueError("need dt > 0 and horizon >= dt")
        if self.estimate_error_radius < 0:
            raise ValueError("estimate_error_radius must be non-negative")
        if self.K is not None and self.estimate_error_radius > self.K.radius:
            raise ValueError("estimate_error_radius exceeds the radius of K")
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))


def _ball_sample(rng, n, radius):
    d = rng.standard_normal(n)
    d /= max(np.linalg.norm(d), 1e-300)
    return radius * rng.random() ** (1.0 / n) * d


def closed_loop(params: UavParams, gain, config: SimConfig, x0=None, rng=None) -> Trajectory:
    """Simulate ``u = G xbar`` with ``xbar = x + e``, ``|e| <= estimate_error_radius``."""
    G = np.atleast_2d(np.asarray(gain, dtype=float))
    if G.shape != (2, 4):
        raise DimensionError(f"UAV gain must be 2x4, got {G.shape}")
    r = config.estimate_error_radius
    if r > 0 and rng is None:
        rng = np.random.default_rng(config.seed)

    def controller(k, x):
        if r > 0:
            xb = x + _ball_sample(rng, 4, r)
            if config.K is not None:
                xb = config.K.project(xb)[0]
            return G @ xb
        return G @ x

    x0 = config.x0 if x0 is None else x0
    return integrate(lambda x, u: uav_field(x, u, params), x0, config.dt, config.horizon, controller)


# wind samplers

def constant_wind_sampler(low=-1.0, high=1.0, c_d=1e-2, c_w=1e-2):
    def sample(rng):
        return UavParams.constant_wind(float(rng.uniform(low, high)), c_d, c_w)
    return sample


def polynomial_wind_sampler(x_range, degree=2, bound=1.0, c_d=1e-2, c_w=1e-2):
    """Random polynomial wind with ``|v_w| <= bound`` on ``x_range``."""
    lo, hi = x_range
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def sample(rng):
        c = rng.uniform(-1.0, 1.0, degree + 1)
        c *= bound / max(np.sum(np.abs(c)), 1e-300)
        shifted = np.polynomial.Polynomial(c)(np.polynomial.Polynomial([-mid / half, 1.0 / half]))
        terms = {(i,): float(v) for i, v in enumerate(shifted.coef)}
        return UavParams(c_d, c_w, Polynomial(1, terms))
    return sample


@dataclass
class DeviationReport:
    times: np.ndarray
    deviations: list
    envelopes: list
    d0: list
    inside_steps: list
    inconclusive: list
    violations: list
    gamma: float | None
    diverged: list

    @property
    def max_excess(self):
        best = -math.inf
        for dev, env, m in zip(self.deviations, self.envelopes, self.inside_steps):
            if env is not None and m > 0:
                best = max(best, float(np.max(dev[:m] - env[:m])))
        return best

    def summary(self):
        return {
            "realizations": len(self.deviations),
            "gamma": self.gamma,
            "violation_count": len(self.violations),
            "violating_realizations": sorted({v[0] for v in self.violations}),
            "first_violations": [list(v) for v in self.violations[:20]],
            "max_excess": self.max_excess if self.gamma is not None else None,
            "inconclusive": self.inconclusive,
            "inside_fraction": [m / len(self.times) for m in self.inside_steps],
            "d0": self.d0,
            "diverged": self.diverged,
        }


def _inside_prefix(traj: Trajectory, K: CompactSet | None):
    if K is None:
        return len(traj)
    inside = K.contains(traj.states)
    return len(traj) if inside.all() else int(np.argmin(inside))


def monte_carlo(params_nominal: UavParams, sampler, gain, config: SimConfig, gamma=None, P=None,
                slack=1e-6, x0_sampler=None):
    """Nominal run plus ``config.realizations`` off-nominal runs.

    Realization ``i`` draws its wind and initial state (uniform in ``K``) from
    its own child stream of ``config.seed`` (``x0_sampler(rng)`` overrides the
    initial state draw). With ``gamma`` given, deviations
    are compared to ``d0 exp(gamma t)`` while both runs stay in ``K``, where
    ``d0`` bounds the infinity-norm deviation through the ``P`` metric.
    Returns ``(report, nominal, trajectories)``.
    """
    K = config.K
    if K is None:
        raise ValueError("monte_carlo needs the compact set K in the config")
    Pm = matan.Metric.of(np.eye(4) if P is None else P)
    streams = np.random.SeedSequence(config.seed).spawn(config.realizations + 1)
    nominal = closed_loop(params_nominal, gain, config, rng=np.random.default_rng(streams[0]))
    nom_inside = _inside_prefix(nominal, K)
    trajs, devs, envs, d0s, inside, inconclusive, violations, diverged = [], [], [], [], [], [], [], []
    for i in range(config.realizations):
        rng = np.random.default_rng(streams[i + 1])
        params = sampler(rng)
        x0 = K.sample(1, rng)[0] if x0_sampler is None else np.asarray(x0_sampler(rng), dtype=float)
        tr = closed_loop(params, gain, config, x0=x0, rng=rng)
        trajs.append(tr)
        m = min(len(tr), len(nominal))
        dev = np.max(np.abs(tr.states[:m] - nominal.states[:m]), axis=1)
        diff0 = x0 - nominal.states[0]
        d0 = float(math.sqrt(diff0 @ Pm.P @ diff0) / math.sqrt(Pm.eig_min))
        m_in = min(_inside_prefix(tr, K), nom_inside, m)
        devs.append(dev)
        envs.append(None if gamma is None else deviation_envelope(d0, gamma, nominal.times[:m]))
        d0s.append(d0)
        inside.append(int(m_in))
        diverged.append(bool(tr.diverged))
        if m_in < m or tr.diverged:
            inconclusive.append(i)
    if gamma is not None:
        violations = envelope_violations(nominal.times, devs, d0s, inside, gamma, slack)
    report = DeviationReport(nominal.times, devs, envs, d0s, inside, inconclusive, violations,
                             None if gamma is None else float(gamma), diverged)
    return report, nominal, trajs


def envelope_violations(times, deviations, d0, inside_steps, gamma, slack=1e-6):
    """``(realization, t, excess)`` wherever ``dev > d0 exp(gamma t) + slack`` inside ``K``."""
    out = []
    for i, (dev, d, m) in enumerate(zip(deviations, d0, inside_steps)):
        excess = dev[:m] - deviation_envelope(d, gamma, times[:m])
        out.extend((i, float(times[j]), float(excess[j])) for j in np.flatnonzero(excess > slack))
    return out


def fit_decay_rate(traj: Trajectory, tail=0.5):
    """``-slope`` of ``log ||x(t)||`` over the trailing fraction; None if not decaying."""
    start = int(len(traj) * (1.0 - tail))
    t = traj.times[start:]
    r = np.linalg.norm(traj.states[start:], axis=1)
    keep = r > 0
    if keep.sum() < 2:
        return None
    slope = np.polyfit(t[keep], np.log(r[keep]), 1)[0]
    alpha = -float(slope)
    return alpha if math.isfinite(alpha) and alpha > 0 else None


@dataclass
class StabilityReport:
    alpha_stab: float | None
    gamma: float
    rate: float | None
    passed: list
    max_excess: list
    inconclusive: bool

    def summary(self):
        return {
            "alpha_stab": self.alpha_stab,
            "gamma": self.gamma,
            "rate": self.rate,
            "passed": self.passed,
            "max_excess": self.max_excess,
            "inconclusive": self.inconclusive,
            "all_pass": bool(not self.inconclusive and all(self.passed)),
        }


def robust_stability_check(nominal: Trajectory, trajectories, gamma, alpha_stab=None, tol=1e-6):
    """Check ``||x(t)|| <= (||x0 - xnom0|| + ||x0||) exp(-min(alpha_stab, |gamma|) t) + tol``."""
    if alpha_stab is None:
        alpha_stab = fit_decay_rate(nominal)
    if alpha_stab is None:
        return StabilityReport(None, float(gamma), None, [False] * len(trajectories),
                               [math.nan] * len(trajectories), True)
    rate = min(alpha_stab, abs(gamma))
    passed, excess = [], []
    for tr in trajectories:
        x0 = tr.states[0]
        c = np.linalg.norm(x0 - nominal.states[0]) + np.linalg.norm(x0)
        bound = c * np.exp(-rate * tr.times) + tol
        e = np.linalg.norm(tr.states, axis=1) - bound
        excess.append(float(np.max(e)))
        passed.append(bool(np.max(e) <= 0))
    return StabilityReport(float(alpha_stab), float(gamma), float(rate), passed, excess, False)


# file output

def _fmt(v):
    return repr(float(v))


def write_trajectory_csv(path, traj: Trajectory, stride=1):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "xdot", "ydot", "u1", "u2"])
        for j in range(0, len(traj), stride):
            w.writerow([_fmt(traj.times[j]), *map(_fmt, traj.states[j]), *map(_fmt, traj.controls[j])])


def write_deviation_csv(path, report: DeviationReport, stride=1):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "dev_inf", "envelope", "realization"])
        for i, (dev, env) in enumerate(zip(report.deviations, report.envelopes)):
            for j in range(0, len(dev), stride):
                w.writerow([_fmt(report.times[j]), _fmt(dev[j]), "" if env is None else _fmt(env[j]), i])
