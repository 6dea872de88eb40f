"""Cone closure of bracket-generated constant directions.

Starting from the noise directions, iterated top-degree adjoints of
constant odd directions against the stored generators accumulate an odd
subspace and a one-sided cone of even directions.  Every direction
carries a derivation tree; the result is a sound under-approximation of
the full cone (enumeration is bounded by a round limit and a combination
budget).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .models import ModelSpec
from .polyfield import (
    ConstantField,
    Derivation,
    PolyVectorField,
    ad_power,
    lie_bracket,
    relative_degree,
)


class SingularBasisError(ValueError):
    pass


# --------------------------------------------------------------------
# Exact rational span bookkeeping.


class RationalSpan:
    """Row space over Q, kept in echelon form for membership tests."""

    def __init__(self, dim: int):
        self.dim = dim
        self.rows: list[tuple[int, tuple[Fraction, ...]]] = []  # (pivot, row)

    def reduce(self, v: tuple[Fraction, ...]) -> tuple[Fraction, ...]:
        v = list(v)
        for pivot, row in self.rows:
            c = v[pivot]
            if c != 0:
                for i in range(self.dim):
                    v[i] -= c * row[i]
        return tuple(v)

    def contains(self, v: tuple[Fraction, ...]) -> bool:
        return all(c == 0 for c in self.reduce(v))

    def add(self, v: tuple[Fraction, ...]) -> bool:
        """Insert the direction; True if it enlarged the span."""
        red = self.reduce(v)
        for pivot in range(self.dim):
            if red[pivot] != 0:
                inv = 1 / red[pivot]
                row = tuple(c * inv for c in red)
                self.rows.append((pivot, row))
                self.rows.sort(key=lambda pr: pr[0])
                return True
        return False

    @property
    def rank(self) -> int:
        return len(self.rows)


def primitive_direction(v: tuple[Fraction, ...]) -> tuple[Fraction, ...]:
    """Scale by a positive rational so entries are coprime integers."""
    nonzero = [c for c in v if c != 0]
    if not nonzero:
        return v
    from math import gcd

    num_gcd = 0
    den_lcm = 1
    for c in nonzero:
        num_gcd = gcd(num_gcd, abs(c.numerator))
        den_lcm = den_lcm * c.denominator // gcd(den_lcm, c.denominator)
    scale = Fraction(den_lcm, num_gcd)
    return tuple(c * scale for c in v)


# --------------------------------------------------------------------
# Generation state.


@dataclass
class GenerationState:
    model: ModelSpec
    odd_constants: list[ConstantField]
    even_constants: list[ConstantField]
    # (field, parity, derivation); parity of a nonconstant generator
    # controls the sign of admissible coefficients in combinations
    nonconstant_generators: list[tuple[PolyVectorField, str, Derivation]]
    round: int = 0
    odd_span: RationalSpan = None
    even_seen: set = field(default_factory=set)
    pairs_done: set = field(default_factory=set)
    last_round_added: bool = True

    def leaves(self) -> dict[str, PolyVectorField]:
        out = {"X0": self.model.drift}
        for j, v in enumerate(self.model.noise, start=1):
            out[f"X{j}"] = PolyVectorField.from_constant(v)
        return out


def closure_init(model: ModelSpec) -> GenerationState:
    """Seed with the noise directions; the drift is the one generator."""
    span = RationalSpan(model.d)
    odd = []
    for j, v in enumerate(model.noise, start=1):
        if all(c == 0 for c in v):
            continue
        if span.add(v):
            odd.append(ConstantField(v, "seed", Derivation.leaf(f"X{j}")))
    return GenerationState(
        model=model,
        odd_constants=odd,
        even_constants=[],
        nonconstant_generators=[(model.drift, "odd", Derivation.leaf("X0"))],
        round=0,
        odd_span=span,
    )


def _v_candidates(state: GenerationState, combo_budget: int, cap: int = 2000):
    """Constant odd directions to bracket with, plus integer combinations
    of the seed span (the seed set is a genuine subspace, so integer
    combinations of seeds stay inside the odd family)."""
    for cf in state.odd_constants:
        yield cf.value, cf.derivation
    if combo_budget < 1:
        return
    seeds = [cf for cf in state.odd_constants if cf.parity == "seed"]
    count = 0
    coeffs = [c for c in range(-combo_budget, combo_budget + 1) if c != 0]
    for a, b in itertools.combinations(seeds, 2):
        for ca in coeffs:
            for cb in coeffs:
                value = tuple(
                    ca * x + cb * y for x, y in zip(a.value, b.value)
                )
                if all(c == 0 for c in value):
                    continue
                yield value, Derivation.combo(
                    [(Fraction(ca), a.derivation), (Fraction(cb), b.derivation)]
                )
                count += 1
                if count >= cap:
                    return


def _w_candidates(state: GenerationState, combo_budget: int, cap: int = 2000):
    """Generators to bracket into, plus integer combinations.  Even
    generators admit only nonnegative coefficients (cone directions)."""
    gens = state.nonconstant_generators
    for W, _, deriv in gens:
        yield W, deriv
    if combo_budget < 1:
        return
    count = 0
    for (Wa, pa, da), (Wb, pb, db) in itertools.combinations(gens, 2):
        ca_range = (
            range(1, combo_budget + 1)
            if pa == "even"
            else [c for c in range(-combo_budget, combo_budget + 1) if c != 0]
        )
        cb_range = (
            range(1, combo_budget + 1)
            if pb == "even"
            else [c for c in range(-combo_budget, combo_budget + 1) if c != 0]
        )
        for ca in ca_range:
            for cb in cb_range:
                W = Wa.scale(ca) + Wb.scale(cb)
                yield W, Derivation.combo(
                    [(Fraction(ca), da), (Fraction(cb), db)]
                )
                count += 1
                if count >= cap:
                    return


def closure_step(state: GenerationState, combo_budget: int = 1) -> GenerationState:
    """One round: bracket every admissible (V, W) pair at its relative
    degree and fold the results in.  Returns a new state."""
    new_odd = list(state.odd_constants)
    new_even = list(state.even_constants)
    new_gens = list(state.nonconstant_generators)
    span = state.odd_span
    added = False

    gen_keys = {_field_key(W) for W, _, _ in new_gens}

    w_list = [(W, w_deriv, _field_key(W)) for W, w_deriv in _w_candidates(state, combo_budget)]

    for v_value, v_deriv in _v_candidates(state, combo_budget):
        V = PolyVectorField.from_constant(v_value)
        for W, w_deriv, w_key in w_list:
            pair = (tuple(v_value), w_key)
            if pair in state.pairs_done:
                # both arguments existed in an earlier round; the result
                # has already been folded in
                continue
            state.pairs_done.add(pair)
            rd = relative_degree(v_value, W)
            if rd is None:
                continue
            m, parity = rd
            if m == 0:
                # W already constant along the line; bracket adds nothing
                continue
            B = ad_power(V, W, m)
            if B.is_zero():
                continue
            deriv = Derivation.ad(m, v_deriv, w_deriv)
            if B.is_constant():
                value = B.constant_value()
                if parity == "odd":
                    if span.add(value):
                        new_odd.append(ConstantField(value, "odd", deriv))
                        added = True
                else:
                    residual = span.reduce(value)
                    if all(c == 0 for c in residual):
                        continue
                    key = primitive_direction(residual)
                    if key not in state.even_seen:
                        state.even_seen.add(key)
                        new_even.append(ConstantField(value, "even", deriv))
                        added = True
            else:
                key = _field_key(B)
                neg_key = _field_key(B.scale(-1))
                if key in gen_keys or (parity == "odd" and neg_key in gen_keys):
                    continue
                gen_keys.add(key)
                new_gens.append((B, parity, deriv))
                added = True

    return replace(
        state,
        odd_constants=new_odd,
        even_constants=new_even,
        nonconstant_generators=new_gens,
        round=state.round + 1,
        last_round_added=added,
    )


def _field_key(V: PolyVectorField):
    return tuple(tuple(sorted(p.terms.items())) for p in V.components)


# --------------------------------------------------------------------
# The computed cone.


@dataclass(frozen=True)
class ConeSpan:
    dim: int
    odd_basis: list[ConstantField]
    even_generators: list[ConstantField]
    exhausted: bool
    rounds: int

    def odd_matrix(self) -> np.ndarray:
        return np.array([cf.as_array() for cf in self.odd_basis]).reshape(
            len(self.odd_basis), self.dim
        )

    def rank(self) -> int:
        span = RationalSpan(self.dim)
        for cf in self.odd_basis:
            span.add(cf.value)
        for cf in self.even_generators:
            span.add(cf.value)
        return span.rank

    def is_full_dim(self) -> bool:
        return self.rank() == self.dim

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "odd_basis": [[str(c) for c in cf.value] for cf in self.odd_basis],
            "even_generators": [
                [str(c) for c in cf.value] for cf in self.even_generators
            ],
            "exhausted": self.exhausted,
            "rounds": self.rounds,
            "derivations": {
                "odd": [str(cf.derivation) for cf in self.odd_basis],
                "even": [str(cf.derivation) for cf in self.even_generators],
            },
        }


def compute_C(
    model: ModelSpec, max_rounds: int = 12, combo_budget: int = 1
) -> ConeSpan:
    """Iterate closure rounds to fixpoint (of this enumeration) or the
    round limit.  Even generators are reported modulo the odd span."""
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    state = closure_init(model)
    exhausted = False
    for _ in range(max_rounds):
        state = closure_step(state, combo_budget)
        if not state.last_round_added:
            exhausted = True
            break

    # linearly independent odd directions, in discovery order
    span = RationalSpan(model.d)
    odd_basis = [cf for cf in state.odd_constants if span.add(cf.value)]

    # evens modulo the odd span, deduplicated as primitive cone directions
    even_out = []
    seen = set()
    for cf in state.even_constants:
        residual = span.reduce(cf.value)
        if all(c == 0 for c in residual):
            continue
        prim = primitive_direction(residual)
        if prim in seen:
            continue
        seen.add(prim)
        even_out.append(ConstantField(prim, "even", cf.derivation))

    return ConeSpan(
        dim=model.d,
        odd_basis=odd_basis,
        even_generators=even_out,
        exhausted=exhausted,
        rounds=state.round,
    )


def verify_derivations(model: ModelSpec, cone: ConeSpan) -> bool:
    """Re-evaluate every derivation tree through the bracket engine and
    compare with the stored direction (evens modulo the odd span)."""
    leaves = {"X0": model.drift}
    for j, v in enumerate(model.noise, start=1):
        leaves[f"X{j}"] = PolyVectorField.from_constant(v)
    span = RationalSpan(model.d)
    for cf in cone.odd_basis:
        V = cf.derivation.evaluate(leaves)
        if not V.is_constant() or V.constant_value() != cf.value:
            return False
        span.add(cf.value)
    for cf in cone.even_generators:
        V = cf.derivation.evaluate(leaves)
        if not V.is_constant():
            return False
        residual = span.reduce(V.constant_value())
        if primitive_direction(residual) != cf.value:
            return False
    return True


# --------------------------------------------------------------------
# Basis selection and membership in the positivity region.


@dataclass(frozen=True)
class PositivityBasis:
    vectors: list[tuple[Fraction, ...]]
    k: int  # first k vectors are two-sided, the rest are one-sided

    @property
    def dim(self) -> int:
        return len(self.vectors)

    def matrix(self) -> np.ndarray:
        return np.array(
            [[float(c) for c in v] for v in self.vectors]
        ).T  # columns are basis vectors

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "vectors": [[str(c) for c in v] for v in self.vectors],
        }


class BasisSelectionError(ValueError):
    """The computed cone does not span the state space."""


def choose_basis(C: ConeSpan) -> PositivityBasis:
    """All odd directions first, then greedily complete from the even
    generators; raises when the cone is rank deficient."""
    span = RationalSpan(C.dim)
    vectors = []
    for cf in C.odd_basis:
        if span.add(cf.value):
            vectors.append(cf.value)
    k = len(vectors)
    for cf in C.even_generators:
        if span.add(cf.value):
            vectors.append(cf.value)
    if len(vectors) < C.dim:
        raise BasisSelectionError(
            f"cone has rank {len(vectors)} < dimension {C.dim}"
        )
    return PositivityBasis(vectors=vectors, k=k)


def d_membership(
    basis: PositivityBasis,
    x: np.ndarray,
    z: np.ndarray,
    strictness_tol: float = 1e-9,
) -> tuple[bool, np.ndarray]:
    """Solve B c = z - x; membership needs every one-sided coefficient
    strictly positive (boundary points are excluded)."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    B = basis.matrix()
    if abs(np.linalg.det(B)) < 1e-12:
        raise SingularBasisError("positivity basis matrix is singular")
    rhs = z - x
    coeffs = np.linalg.solve(B, rhs)
    tol = strictness_tol * np.linalg.norm(rhs)
    member = bool(np.all(coeffs[basis.k :] > tol))
    return member, coeffs


def twist_rank_check(
    model: ModelSpec, points: list[np.ndarray], threshold: float = 1e-9
) -> bool:
    """True when the noise directions plus first drift brackets at the
    sample points already span the state space numerically."""
    if not points:
        raise ValueError("points must be nonempty")
    cols = [model.noise_matrix()[:, j] for j in range(model.r)]
    brackets = [
        lie_bracket(Xf, model.drift) for Xf in model.noise_fields()
    ]
    for p in points:
        for br in brackets:
            cols.append(br.eval(np.asarray(p, dtype=float)))
    if not cols:
        return False
    A = np.array(cols).T
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return False
    rank = int(np.sum(s > threshold * s[0]))
    return rank == model.d
