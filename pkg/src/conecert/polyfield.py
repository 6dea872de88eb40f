"""Exact multivariate polynomials and polynomial vector-field calculus.

Coefficients are rationals (`fractions.Fraction`) throughout, so parity
decisions and zero tests are never contaminated by floating point.  All
values are immutable after construction and every operation is a pure
function.
"""

from __future__ import annotations

import enum
import functools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponents = tuple[int, ...]
Rational = Fraction | int


class DegreeSentinel(enum.Enum):
    """Degree of the zero polynomial: neither even nor odd, not an int."""

    NO_DEGREE = "no-degree"


NO_DEGREE = DegreeSentinel.NO_DEGREE


class DimensionMismatchError(ValueError):
    pass


def _grlex_key(exps: Exponents) -> tuple:
    # graded lexicographic: total degree first, then lexicographic
    return (sum(exps), exps)


_ZERO = Fraction(0)


class Polynomial:
    """Sparse exact-rational polynomial in `dim` variables.

    Terms map exponent tuples of length `dim` to nonzero Fractions.
    Term order is canonical (graded lex), so equal polynomials compare
    equal structurally.
    """

    __slots__ = ("dim", "terms", "_hash")

    def __init__(self, dim: int, terms: Mapping[Exponents, Rational] = ()):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        clean: dict[Exponents, Fraction] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for exps, coeff in items:
            exps = tuple(int(e) for e in exps)
            if len(exps) != dim:
                raise DimensionMismatchError(
                    f"exponent vector {exps} has length {len(exps)}, expected {dim}"
                )
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            c = Fraction(coeff)
            if c != 0:
                c += clean.get(exps, Fraction(0))
                if c == 0:
                    del clean[exps]
                else:
                    clean[exps] = c
        object.__setattr__(self, "dim", dim)
        object.__setattr__(
            self, "terms", dict(sorted(clean.items(), key=lambda kv: _grlex_key(kv[0])))
        )
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------

    @classmethod
    def _raw(cls, dim: int, terms: dict) -> "Polynomial":
        """Trusted constructor for internal arithmetic: `terms` must
        already map valid exponent tuples to nonzero Fractions."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "dim", dim)
        object.__setattr__(
            obj, "terms", dict(sorted(terms.items(), key=lambda kv: _grlex_key(kv[0])))
        )
        object.__setattr__(obj, "_hash", None)
        return obj

    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls(dim, {})

    @classmethod
    def constant(cls, dim: int, c: Rational) -> "Polynomial":
        return cls(dim, {(0,) * dim: Fraction(c)})

    @classmethod
    def variable(cls, dim: int, i: int) -> "Polynomial":
        exps = [0] * dim
        exps[i] = 1
        return cls(dim, {tuple(exps): Fraction(1)})

    # -- queries ------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(sum(e) == 0 for e in self.terms)

    def constant_value(self) -> Fraction:
        return self.terms.get((0,) * self.dim, Fraction(0))

    def degree(self) -> int | DegreeSentinel:
        if not self.terms:
            return NO_DEGREE
        return max(sum(e) for e in self.terms)

    # -- arithmetic ---------------------------------------------------

    def _check_dim(self, other: "Polynomial") -> None:
        if self.dim != other.dim:
            raise DimensionMismatchError(f"dim {self.dim} vs {other.dim}")

    def __add__(self, other: "Polynomial") -> "Polynomial":
        self._check_dim(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            s = terms.get(e, _ZERO) + c
            if s == 0:
                terms.pop(e, None)
            else:
                terms[e] = s
        return Polynomial._raw(self.dim, terms)

    def __neg__(self) -> "Polynomial":
        return Polynomial._raw(self.dim, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        self._check_dim(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            s = terms.get(e, _ZERO) - c
            if s == 0:
                terms.pop(e, None)
            else:
                terms[e] = s
        return Polynomial._raw(self.dim, terms)

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, Fraction)):
            return self.scale(other)
        self._check_dim(other)
        terms: dict[Exponents, Fraction] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                s = terms.get(e, _ZERO) + c1 * c2
                if s == 0:
                    terms.pop(e, None)
                else:
                    terms[e] = s
        return Polynomial._raw(self.dim, terms)

    __rmul__ = __mul__

    def scale(self, c: Rational) -> "Polynomial":
        c = Fraction(c)
        if c == 0:
            return Polynomial.zero(self.dim)
        return Polynomial._raw(self.dim, {e: c * co for e, co in self.terms.items()})

    def diff(self, i: int) -> "Polynomial":
        """Partial derivative with respect to variable i, exact."""
        terms: dict[Exponents, Fraction] = {}
        for e, c in self.terms.items():
            if e[i] == 0:
                continue
            d = list(e)
            d[i] -= 1
            terms[tuple(d)] = c * e[i]
        return Polynomial._raw(self.dim, terms)

    def substitute_line(self, v: Sequence[Rational]) -> "Polynomial":
        """Substitute x := lambda*v, returning a univariate polynomial in lambda."""
        if len(v) != self.dim:
            raise DimensionMismatchError(f"point length {len(v)} != dim {self.dim}")
        v = [c if type(c) is Fraction else Fraction(c) for c in v]
        terms: dict[Exponents, Fraction] = {}
        for e, c in self.terms.items():
            coeff = c
            for vi, ei in zip(v, e):
                if ei:
                    if vi == 0:
                        coeff = Fraction(0)
                        break
                    coeff *= vi**ei
            if coeff == 0:
                continue
            key = (sum(e),)
            s = terms.get(key, Fraction(0)) + coeff
            if s == 0:
                terms.pop(key, None)
            else:
                terms[key] = s
        return Polynomial._raw(1, terms)

    def eval_exact(self, x: Sequence[Rational]) -> Fraction:
        if len(x) != self.dim:
            raise DimensionMismatchError(f"point length {len(x)} != dim {self.dim}")
        x = [Fraction(c) for c in x]
        total = Fraction(0)
        for e, c in self.terms.items():
            term = c
            for xi, ei in zip(x, e):
                if ei:
                    term *= xi**ei
            total += term
        return total

    def eval(self, x: Sequence[float]) -> float:
        """Evaluate at a real point; rational substitution when possible."""
        if len(x) != self.dim:
            raise DimensionMismatchError(f"point length {len(x)} != dim {self.dim}")
        total = 0.0
        for e, c in self.terms.items():
            term = float(c)
            for xi, ei in zip(x, e):
                if ei:
                    term *= float(xi) ** ei
            total += term
        return total

    # -- comparison / repr --------------------------------------------

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Polynomial)
            and self.dim == other.dim
            and self.terms == other.terms
        )

    def __hash__(self) -> int:
        if self._hash is None:
            object.__setattr__(
                self, "_hash", hash((self.dim, tuple(self.terms.items())))
            )
        return self._hash

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for e, c in self.terms.items():
            mon = "*".join(
                f"x{i}^{p}" if p > 1 else f"x{i}" for i, p in enumerate(e) if p
            )
            parts.append(f"{c}" if not mon else f"{c}*{mon}")
        return " + ".join(parts)


@dataclass(frozen=True)
class PolyVectorField:
    """A vector field on R^dim whose components are Polynomials."""

    dim: int
    components: tuple[Polynomial, ...]

    def __post_init__(self):
        if len(self.components) != self.dim:
            raise DimensionMismatchError(
                f"{len(self.components)} components for dim {self.dim}"
            )
        for p in self.components:
            if p.dim != self.dim:
                raise DimensionMismatchError(
                    f"component dim {p.dim} != field dim {self.dim}"
                )
        object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def zero(cls, dim: int) -> "PolyVectorField":
        return cls(dim, tuple(Polynomial.zero(dim) for _ in range(dim)))

    @classmethod
    def from_constant(cls, v: Sequence[Rational]) -> "PolyVectorField":
        dim = len(v)
        return cls(
            dim, tuple(Polynomial.constant(dim, c) for c in v)
        )

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self.components)

    def is_constant(self) -> bool:
        return all(p.is_constant() for p in self.components)

    def constant_value(self) -> tuple[Fraction, ...]:
        return tuple(p.constant_value() for p in self.components)

    def __add__(self, other: "PolyVectorField") -> "PolyVectorField":
        return PolyVectorField(
            self.dim, tuple(a + b for a, b in zip(self.components, other.components))
        )

    def __sub__(self, other: "PolyVectorField") -> "PolyVectorField":
        return PolyVectorField(
            self.dim, tuple(a - b for a, b in zip(self.components, other.components))
        )

    def scale(self, c: Rational) -> "PolyVectorField":
        return PolyVectorField(self.dim, tuple(p.scale(c) for p in self.components))

    def eval(self, x: Sequence[float]) -> np.ndarray:
        return np.array([p.eval(x) for p in self.components], dtype=float)

    def eval_exact(self, x: Sequence[Rational]) -> tuple[Fraction, ...]:
        return tuple(p.eval_exact(x) for p in self.components)


def jacobian(V: PolyVectorField) -> list[list[Polynomial]]:
    """Exact Jacobian matrix: entry (j, k) = dV^j/dx_k."""
    return [[V.components[j].diff(k) for k in range(V.dim)] for j in range(V.dim)]


def directional_derivative(W: PolyVectorField, v: Sequence[Rational]) -> PolyVectorField:
    """Derivative of W along the constant direction v, component-wise."""
    comps = []
    for p in W.components:
        acc = Polynomial.zero(W.dim)
        for k, vk in enumerate(v):
            if vk:
                acc = acc + p.diff(k).scale(vk)
        comps.append(acc)
    return PolyVectorField(W.dim, tuple(comps))


def lie_bracket(V: PolyVectorField, W: PolyVectorField) -> PolyVectorField:
    """Commutator [V, W]^j = sum_k (V^k dW^j/dx_k - W^k dV^j/dx_k)."""
    if V.dim != W.dim:
        raise DimensionMismatchError(f"dim {V.dim} vs {W.dim}")
    d = V.dim
    v_nz = [k for k in range(d) if not V.components[k].is_zero()]
    w_nz = [k for k in range(d) if not W.components[k].is_zero()]
    comps = []
    for j in range(d):
        acc: dict = {}
        for k in v_nz:
            dw = _diff_cached(W.components[j], k)
            if dw.is_zero():
                continue
            _accumulate_product(acc, V.components[k], dw, 1)
        for k in w_nz:
            dv = _diff_cached(V.components[j], k)
            if dv.is_zero():
                continue
            _accumulate_product(acc, W.components[k], dv, -1)
        comps.append(Polynomial._raw(d, acc))
    return PolyVectorField(d, tuple(comps))


@functools.lru_cache(maxsize=65536)
def _diff_cached(p: Polynomial, i: int) -> Polynomial:
    # the same field gets bracketed against many directions; its partials
    # are worth remembering
    return p.diff(i)


def _accumulate_product(acc: dict, p: Polynomial, q: Polynomial, sign: int) -> None:
    """acc += sign * p * q, in place on a raw term dict."""
    for e1, c1 in p.terms.items():
        for e2, c2 in q.terms.items():
            e = tuple(a + b for a, b in zip(e1, e2))
            s = acc.get(e, _ZERO) + sign * c1 * c2
            if s == 0:
                acc.pop(e, None)
            else:
                acc[e] = s


def ad_power(V: PolyVectorField, W: PolyVectorField, m: int) -> PolyVectorField:
    """m-fold iterated bracket ad^m V (W); ad^0 V (W) = W."""
    if m < 0:
        raise ValueError(f"m must be nonnegative, got {m}")
    out = W
    for _ in range(m):
        out = lie_bracket(V, out)
    return out


def relative_degree(
    v: Sequence[Rational], W: PolyVectorField
) -> tuple[int, str] | None:
    """Maximal degree of lambda -> W(lambda*v) and its parity.

    Returns None when every component restricts to the zero polynomial
    (the zero polynomial has neither even nor odd degree).
    """
    if len(v) != W.dim:
        raise DimensionMismatchError(f"vector length {len(v)} != dim {W.dim}")
    v = [c if type(c) is Fraction else Fraction(c) for c in v]
    best: int | None = None
    for p in W.components:
        q = p.substitute_line(v)
        d = q.degree()
        if d is NO_DEGREE:
            continue
        if best is None or d > best:
            best = d
    if best is None:
        return None
    return best, ("odd" if best % 2 else "even")


# --------------------------------------------------------------------
# Bracket-derivation trees
#
# Each constant direction discovered by the closure carries a tree that
# re-evaluates (through the functions above) to its exact value.  Leaves
# name the model's defining fields; internal nodes record ad-power
# applications and rational linear combinations.


@dataclass(frozen=True)
class Derivation:
    """Expression tree for how a field was produced.

    kind: "leaf" (name), "ad" (m-fold bracket of v_tree into w_tree) or
    "combo" (rational linear combination of subtrees).
    """

    kind: str
    name: str | None = None
    m: int | None = None
    v: "Derivation | None" = None
    w: "Derivation | None" = None
    parts: tuple[tuple[Fraction, "Derivation"], ...] = ()

    @classmethod
    def leaf(cls, name: str) -> "Derivation":
        return cls(kind="leaf", name=name)

    @classmethod
    def ad(cls, m: int, v: "Derivation", w: "Derivation") -> "Derivation":
        return cls(kind="ad", m=m, v=v, w=w)

    @classmethod
    def combo(cls, parts: Iterable[tuple[Rational, "Derivation"]]) -> "Derivation":
        return cls(
            kind="combo", parts=tuple((Fraction(c), t) for c, t in parts)
        )

    def evaluate(self, leaves: Mapping[str, PolyVectorField]) -> PolyVectorField:
        if self.kind == "leaf":
            return leaves[self.name]
        if self.kind == "ad":
            return ad_power(self.v.evaluate(leaves), self.w.evaluate(leaves), self.m)
        if self.kind == "combo":
            dim = self.parts[0][1].evaluate(leaves).dim
            acc = PolyVectorField.zero(dim)
            for c, t in self.parts:
                acc = acc + t.evaluate(leaves).scale(c)
            return acc
        raise ValueError(f"unknown derivation kind {self.kind!r}")

    def __str__(self) -> str:
        if self.kind == "leaf":
            return self.name
        if self.kind == "ad":
            if self.m == 1:
                return f"[{self.v}, {self.w}]"
            return f"ad^{self.m}({self.v})({self.w})"
        terms = " + ".join(
            str(t) if c == 1 else f"{c}*({t})" for c, t in self.parts
        )
        return f"({terms})"


@dataclass(frozen=True)
class ConstantField:
    """A constant direction with its parity tag and derivation record.

    parity is "seed" for the noise fields and their span, else the
    parity of the relative degree that produced the direction.
    """

    value: tuple[Fraction, ...]
    parity: str
    derivation: Derivation

    def __post_init__(self):
        if self.parity not in ("odd", "even", "seed"):
            raise ValueError(f"bad parity {self.parity!r}")
        object.__setattr__(self, "value", tuple(Fraction(c) for c in self.value))

    @property
    def dim(self) -> int:
        return len(self.value)

    def as_field(self) -> PolyVectorField:
        return PolyVectorField.from_constant(self.value)

    def as_array(self) -> np.ndarray:
        return np.array([float(c) for c in self.value])


# --------------------------------------------------------------------
# Serialization: JSON list of {"coeff": "p/q", "exps": [...]}; vector
# fields as lists of such lists.  Round-trips are bit exact.


def poly_to_json(p: Polynomial) -> list[dict]:
    return [
        {"coeff": f"{c.numerator}/{c.denominator}", "exps": list(e)}
        for e, c in p.terms.items()
    ]


def poly_from_json(data: list[dict], dim: int) -> Polynomial:
    terms = {}
    for i, entry in enumerate(data):
        try:
            coeff = Fraction(entry["coeff"])
            exps = tuple(int(e) for e in entry["exps"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed polynomial term {i}: {entry!r}") from exc
        if len(exps) != dim:
            raise ValueError(
                f"term {i}: exponent vector length {len(exps)} != dim {dim}"
            )
        terms[exps] = terms.get(exps, Fraction(0)) + coeff
    return Polynomial(dim, terms)


def field_to_json(V: PolyVectorField) -> list[list[dict]]:
    return [poly_to_json(p) for p in V.components]


def field_from_json(data: list[list[dict]], dim: int) -> PolyVectorField:
    if len(data) != dim:
        raise ValueError(f"vector field has {len(data)} components, expected {dim}")
    comps = []
    for j, comp in enumerate(data):
        try:
            comps.append(poly_from_json(comp, dim))
        except ValueError as exc:
            raise ValueError(f"component {j}: {exc}") from exc
    return PolyVectorField(dim, tuple(comps))


# --------------------------------------------------------------------
# Numeric compilation: fast batched evaluation for flows and Monte Carlo.


def _power_tables(x: np.ndarray, maxdeg: np.ndarray) -> list[np.ndarray]:
    """Per-coordinate tables of x_i^k for k = 0..maxdeg[i], built by
    repeated multiplication (much faster than float pow)."""
    tables = []
    for i, m in enumerate(maxdeg):
        t = np.empty(x.shape[:-1] + (int(m) + 1,))
        t[..., 0] = 1.0
        for k in range(1, int(m) + 1):
            t[..., k] = t[..., k - 1] * x[..., i]
        tables.append(t)
    return tables


def compile_field(V: PolyVectorField):
    """Compile to a function f(x) -> drift, x of shape (..., dim)."""
    dim = V.dim
    specs = []
    for p in V.components:
        coeffs = np.array([float(c) for c in p.terms.values()])
        exps = np.array(list(p.terms.keys()), dtype=np.int64).reshape(-1, dim)
        specs.append((coeffs, exps, [bool((exps[:, i] > 0).any()) for i in range(dim)]))
    maxdeg = np.zeros(dim, dtype=np.int64)
    for _, exps, _ in specs:
        if exps.size:
            maxdeg = np.maximum(maxdeg, exps.max(axis=0))

    def f(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pw = _power_tables(x, maxdeg)
        out = np.zeros(x.shape)
        for j, (coeffs, exps, used) in enumerate(specs):
            if coeffs.size == 0:
                continue
            mono = None
            for i in range(dim):
                if not used[i]:
                    continue
                fac = pw[i][..., exps[:, i]]
                mono = fac if mono is None else mono * fac
            if mono is None:
                mono = np.ones(x.shape[:-1] + (len(coeffs),))
            out[..., j] = mono @ coeffs
        return out

    return f


def compile_jacobian(V: PolyVectorField):
    """Compile the Jacobian to a function J(x) -> (..., dim, dim) array."""
    J = jacobian(V)
    dim = V.dim
    entries = []
    maxdeg = np.zeros(dim, dtype=np.int64)
    for j in range(dim):
        for k in range(dim):
            p = J[j][k]
            if not p.terms:
                continue
            coeffs = np.array([float(c) for c in p.terms.values()])
            exps = np.array(list(p.terms.keys()), dtype=np.int64).reshape(-1, dim)
            used = [bool((exps[:, i] > 0).any()) for i in range(dim)]
            entries.append((j, k, coeffs, exps, used))
            maxdeg = np.maximum(maxdeg, exps.max(axis=0))

    def jf(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pw = _power_tables(x, maxdeg)
        out = np.zeros(x.shape[:-1] + (dim, dim))
        for j, k, coeffs, exps, used in entries:
            mono = None
            for i in range(dim):
                if not used[i]:
                    continue
                fac = pw[i][..., exps[:, i]]
                mono = fac if mono is None else mono * fac
            if mono is None:
                mono = np.ones(x.shape[:-1] + (len(coeffs),))
            out[..., j, k] = mono @ coeffs
        return out

    return jf
