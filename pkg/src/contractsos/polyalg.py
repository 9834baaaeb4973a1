"""Sparse multivariate polynomials, polynomial vector fields and Jacobians.

Polynomials are immutable maps from exponent tuples to float coefficients.
Exact zeros are pruned and nothing else, so symbolic identities such as
``divergence(f) == jacobian(f).trace()`` hold term by term.

Monomials are ordered graded-lexicographically: by total degree first, then
with higher powers of earlier variables first, e.g. ``1, x1, x2, x1**2,
x1*x2, x2**2``.
"""
from __future__ import annotations

import itertools
import math
from numbers import Real
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError

MAX_DEGREE = 8


def grlex_key(exps):
    return (sum(exps), tuple(-e for e in exps))


def _check_exps(exps, dim):
    exps = tuple(int(e) for e in exps)
    if len(exps) != dim:
        raise DimensionError(f"exponent {exps} has length {len(exps)}, expected {dim}")
    if any(e < 0 for e in exps):
        raise ValueError(f"negative exponent in {exps}")
    return exps


class Polynomial:
    """A real polynomial in ``dim`` variables.

    Parameters
    ----------
    dim : int
        Number of variables.
    terms : mapping, optional
        ``{exponent tuple: coefficient}``; zero coefficients are dropped.
    """

    __slots__ = ("dim", "_terms", "_cache")

    def __init__(self, dim: int, terms: Mapping[Sequence[int], float] | None = None):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        clean = {}
        for exps, coef in (terms or {}).items():
            exps = _check_exps(exps, self.dim)
            coef = float(coef)
            if coef != 0.0:
                clean[exps] = clean.get(exps, 0.0) + coef
        clean = {e: c for e, c in clean.items() if c != 0.0}
        if clean and max(sum(e) for e in clean) > MAX_DEGREE:
            raise ValueError(f"degree exceeds supported maximum {MAX_DEGREE}")
        self._terms = dict(sorted(clean.items(), key=lambda kv: grlex_key(kv[0])))
        self._cache = None

    # construction helpers
    @classmethod
    def constant(cls, dim, value):
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def variable(cls, dim, index):
        exps = [0] * dim
        exps[index] = 1
        return cls(dim, {tuple(exps): 1.0})

    @classmethod
    def sum_of_squares(cls, dim):
        """``x1**2 + ... + xn**2``."""
        terms = {}
        for i in range(dim):
            e = [0] * dim
            e[i] = 2
            terms[tuple(e)] = 1.0
        return cls(dim, terms)

    @property
    def terms(self):
        return dict(self._terms)

    @property
    def degree(self):
        return max((sum(e) for e in self._terms), default=0)

    def is_zero(self):
        return not self._terms

    def coefficient(self, exps):
        return self._terms.get(tuple(exps), 0.0)

    # arithmetic
    def _coerce(self, other):
        if isinstance(other, Polynomial):
            if other.dim != self.dim:
                raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other
        if isinstance(other, Real):
            return Polynomial.constant(self.dim, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self._terms)
        for e, c in other._terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Polynomial(self.dim, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.dim, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Real):
            return Polynomial(self.dim, {e: c * float(other) for e, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = {}
        for (e1, c1), (e2, c2) in itertools.product(self._terms.items(), other._terms.items()):
            e = tuple(a + b for a, b in zip(e1, e2))
            terms[e] = terms.get(e, 0.0) + c1 * c2
        return Polynomial(self.dim, terms)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0 or int(k) != k:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(self.dim, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def __eq__(self, other):
        if isinstance(other, Real):
            other = Polynomial.constant(self.dim, float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        return hash((self.dim, tuple(self._terms.items())))

    def __repr__(self):
        if not self._terms:
            return f"Polynomial(dim={self.dim}, 0)"
        parts = []
        for e, c in self._terms.items():
            mono = "*".join(f"x{i + 1}" + (f"**{k}" if k > 1 else "") for i, k in enumerate(e) if k)
            parts.append(f"{c:g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial(dim={self.dim}, " + " + ".join(parts) + ")"

    # calculus
    def diff(self, index: int) -> "Polynomial":
        """Partial derivative with respect to variable ``index`` (0-based)."""
        if not 0 <= index < self.dim:
            raise DimensionError(f"variable index {index} out of range for dim {self.dim}")
        terms = {}
        for e, c in self._terms.items():
            k = e[index]
            if k:
                ne = list(e)
                ne[index] = k - 1
                terms[tuple(ne)] = terms.get(tuple(ne), 0.0) + c * k
        return Polynomial(self.dim, terms)

    def gradient(self) -> "PolyVec":
        return PolyVec([self.diff(i) for i in range(self.dim)])

    # evaluation
    def _arrays(self):
        if self._cache is None:
            if self._terms:
                E = np.array(list(self._terms.keys()), dtype=np.int64)
                c = np.array(list(self._terms.values()), dtype=float)
            else:
                E = np.zeros((0, self.dim), dtype=np.int64)
                c = np.zeros(0)
            self._cache = (E, c)
        return self._cache

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(f"point has shape {x.shape}, expected ({self.dim},)")
        total = 0.0
        for e, c in self._terms.items():
            total += c * math.prod(xi ** k for xi, k in zip(x, e) if k)
        return total

    def eval_many(self, X) -> np.ndarray:
        """Evaluate at each row of an ``(N, dim)`` array."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionError(f"points have {X.shape[1]} columns, expected {self.dim}")
        E, c = self._arrays()
        if not len(c):
            return np.zeros(X.shape[0])
        mons = np.prod(X[:, None, :] ** E[None, :, :], axis=2)
        return mons @ c

    def abs_bound(self, box) -> float:
        """Coefficient bound on ``sup |p|`` over ``{x : |x_i| <= box_i}``."""
        box = np.asarray(box, dtype=float)
        return float(sum(abs(c) * math.prod(b ** k for b, k in zip(box, e)) for e, c in self._terms.items()))

    # serialization
    def to_json(self):
        return {"dim": self.dim, "terms": [{"exp": list(e), "coef": c} for e, c in self._terms.items()]}

    @classmethod
    def from_json(cls, obj):
        return cls(int(obj["dim"]), {tuple(t["exp"]): t["coef"] for t in obj["terms"]})


class PolyVec:
    """An ordered, non-empty list of polynomials sharing one dimension."""

    __slots__ = ("entries",)

    def __init__(self, entries: Iterable[Polynomial]):
        entries = tuple(entries)
        if not entries:
            raise ValueError("PolyVec must be non-empty")
        dim = entries[0].dim
        if any(p.dim != dim for p in entries):
            raise DimensionError("PolyVec entries have mixed dimensions")
        self.entries = entries

    @property
    def dim(self):
        return self.entries[0].dim

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, PolyVec) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def __repr__(self):
        return f"PolyVec({list(self.entries)!r})"

    def __add__(self, other):
        if not isinstance(other, PolyVec) or len(other) != len(self):
            raise DimensionError("PolyVec addition needs equal lengths")
        return PolyVec(p + q for p, q in zip(self, other))

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, s):
        return PolyVec(p * s for p in self)

    def dot(self, other: "PolyVec") -> Polynomial:
        if len(other) != len(self):
            raise DimensionError("PolyVec dot needs equal lengths")
        out = Polynomial(self.dim)
        for p, q in zip(self, other):
            out = out + p * q
        return out

    def __call__(self, x) -> np.ndarray:
        return np.array([p(x) for p in self.entries])

    def eval_many(self, X) -> np.ndarray:
        """``(N, len)`` array of values at the rows of ``X``."""
        return np.stack([p.eval_many(X) for p in self.entries], axis=1)

    def jacobian(self) -> "PolyMatrix":
        return PolyMatrix([[p.diff(j) for j in range(self.dim)] for p in self.entries])

    def divergence(self) -> Polynomial:
        if len(self) != self.dim:
            raise DimensionError(f"divergence needs a square field, got {len(self)} entries over {self.dim} variables")
        out = Polynomial(self.dim)
        for i, p in enumerate(self.entries):
            out = out + p.diff(i)
        return out

    def degree(self):
        return max(p.degree for p in self.entries)

    def to_json(self):
        return [p.to_json() for p in self.entries]

    @classmethod
    def from_json(cls, obj):
        return cls(Polynomial.from_json(o) for o in obj)


class PolyMatrix:
    """A rectangular grid of polynomials."""

    __slots__ = ("rows",)

    def __init__(self, rows: Iterable[Iterable[Polynomial]]):
        rows = tuple(tuple(r) for r in rows)
        if not rows or not rows[0]:
            raise ValueError("PolyMatrix must be non-empty")
        ncol = len(rows[0])
        if any(len(r) != ncol for r in rows):
            raise DimensionError("PolyMatrix rows have different lengths")
        dim = rows[0][0].dim
        if any(p.dim != dim for r in rows for p in r):
            raise DimensionError("PolyMatrix entries have mixed dimensions")
        self.rows = rows

    @property
    def shape(self):
        return len(self.rows), len(self.rows[0])

    @property
    def dim(self):
        return self.rows[0][0].dim

    def __getitem__(self, ij):
        i, j = ij
        return self.rows[i][j]

    def __eq__(self, other):
        return isinstance(other, PolyMatrix) and self.rows == other.rows

    def __hash__(self):
        return hash(self.rows)

    def __call__(self, x) -> np.ndarray:
        return np.array([[p(x) for p in r] for r in self.rows])

    def eval_many(self, X) -> np.ndarray:
        """``(N, rows, cols)`` array of values at the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m, k = self.shape
        out = np.zeros((X.shape[0], m, k))
        for i, r in enumerate(self.rows):
            for j, p in enumerate(r):
                if not p.is_zero():
                    out[:, i, j] = p.eval_many(X)
        return out

    def trace(self) -> Polynomial:
        m, k = self.shape
        if m != k:
            raise DimensionError("trace of a non-square PolyMatrix")
        out = Polynomial(self.dim)
        for i in range(m):
            out = out + self.rows[i][i]
        return out


def monomial_basis(n: int, d: int, include_constant: bool = True) -> PolyVec:
    """All monomials in ``n`` variables of total degree ``<= d``, graded-lex ordered."""
    if n < 1 or d < 0:
        raise ValueError("need n >= 1 and d >= 0")
    if d > MAX_DEGREE:
        raise ValueError(f"degree {d} exceeds supported maximum {MAX_DEGREE}")
    monos = []
    for deg in range(0 if include_constant else 1, d + 1):
        for combo in itertools.combinations_with_replacement(range(n), deg):
            e = [0] * n
            for i in combo:
                e[i] += 1
            monos.append(Polynomial(n, {tuple(e): 1.0}))
    if not monos:
        raise ValueError("empty basis (d = 0 without constant)")
    return PolyVec(monos)


def evaluate(p, x):
    """Evaluate a Polynomial, PolyVec or PolyMatrix at a point."""
    return p(x)


def jacobian(f: PolyVec) -> PolyMatrix:
    return f.jacobian()


def divergence(f: PolyVec) -> Polynomial:
    return f.divergence()


def gradient(p: Polynomial) -> PolyVec:
    return p.gradient()


def linear_field(A) -> PolyVec:
    """The vector field ``x -> A @ x``."""
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    xs = [Polynomial.variable(n, j) for j in range(n)]
    rows = []
    for i in range(A.shape[0]):
        p = Polynomial(n)
        for j in range(n):
            if A[i, j] != 0.0:
                p = p + xs[j] * A[i, j]
        rows.append(p)
    return PolyVec(rows)


def combine(theta, basis: PolyVec) -> PolyVec:
    """The field ``theta.T @ b(x)`` for a ``(k, n)`` coefficient matrix."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != len(basis):
        raise DimensionError(f"theta has {theta.shape[0]} rows but basis has {len(basis)} entries")
    out = []
    for i in range(theta.shape[1]):
        terms = {}
        for j, b in enumerate(basis):
            if theta[j, i] != 0.0:
                for e, c in b.terms.items():
                    terms[e] = terms.get(e, 0.0) + theta[j, i] * c
        out.append(Polynomial(basis.dim, terms))
    return PolyVec(out)


def second_derivative_bound(f: PolyVec, box) -> float:
    """Bound on ``sup ||D^2 f||_F`` over the box ``|x_i| <= box_i``.

    Used as a Lipschitz modulus for ``x -> Df(x)`` in the spectral norm.
    """
    total = 0.0
    for p in f:
        for j in range(f.dim):
            pj = p.diff(j)
            for l in range(f.dim):
                total += pj.diff(l).abs_bound(box) ** 2
    return math.sqrt(total)


def coefficients_in_basis(f: PolyVec, basis: PolyVec) -> np.ndarray:
    """The ``(k, n)`` matrix ``theta`` with ``f = theta.T @ b`` for a monomial basis.

    Raises ValueError if ``f`` has a monomial outside the basis.
    """
    index = {}
    for j, b in enumerate(basis):
        terms = list(b.terms.items())
        if len(terms) != 1 or terms[0][1] != 1.0:
            raise ValueError("basis entries must be monic monomials")
        index[terms[0][0]] = j
    theta = np.zeros((len(basis), len(f)))
    for i, p in enumerate(f):
        for e, c in p.terms.items():
            if e not in index:
                raise ValueError(f"monomial {e} of the field is not in the basis")
            theta[index[e], i] = c
    return theta
