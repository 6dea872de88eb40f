"""Controlled flows, Jacobian propagation, Gramian checks and control
synthesis for positivity certificates.

The controlled flow follows the drift plus piecewise-constant inputs in
the noise directions.  Along a synthesized path, invertibility of the
Gramian M_t = int J_{s,t} B B^T J_{s,t}^T ds (checked directly and via
the rank of the noise-plus-first-bracket family along the trajectory)
certifies strict positivity of the stopped transition density at the
endpoint, for any stopping ball containing the whole path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .closure import PositivityBasis, d_membership, twist_rank_check
from .equilibria import EquilibriumPoint, find_equilibria, iter_chains
from .models import ModelSpec
from .polyfield import compile_field, compile_jacobian, lie_bracket


class FlowDivergenceError(RuntimeError):
    def __init__(self, time: float):
        super().__init__(f"flow diverged (non-finite state) at time {time:.6g}")
        self.time = time


@dataclass(frozen=True)
class ControlPath:
    """Piecewise-constant control h on [0, horizon]; the integrated
    control is piecewise linear and square integrable."""

    horizon: float
    breakpoints: np.ndarray  # increasing, first 0, last horizon
    values: np.ndarray  # (n_intervals, r)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if bp[0] != 0 or not np.isclose(bp[-1], self.horizon):
            raise ValueError("breakpoints must start at 0 and end at the horizon")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(vals) != len(bp) - 1:
            raise ValueError("need one value row per interval")
        if not np.all(np.isfinite(vals)):
            raise ValueError("control values must be finite")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @property
    def r(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zero(cls, horizon: float, r: int) -> "ControlPath":
        return cls(horizon, np.array([0.0, horizon]), np.zeros((1, max(r, 1)))[:, :r].reshape(1, r))

    @classmethod
    def constant(cls, horizon: float, u) -> "ControlPath":
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(horizon, np.array([0.0, horizon]), u.reshape(1, -1))

    @classmethod
    def uniform(cls, horizon: float, values) -> "ControlPath":
        values = np.atleast_2d(np.asarray(values, dtype=float))
        n = len(values)
        return cls(horizon, np.linspace(0.0, horizon, n + 1), values)

    def concat(self, other: "ControlPath") -> "ControlPath":
        return ControlPath(
            self.horizon + other.horizon,
            np.concatenate([self.breakpoints, other.breakpoints[1:] + self.horizon]),
            np.vstack([self.values, other.values]),
        )

    def to_json(self) -> dict:
        return {
            "horizon": float(self.horizon),
            "breakpoints": [float(b) for b in self.breakpoints],
            "values": self.values.tolist(),
        }


@dataclass(frozen=True)
class FlowResult:
    times: np.ndarray  # quadrature nodes, including 0 and t
    states: np.ndarray  # (n_nodes, d)
    J0: np.ndarray  # (n_nodes, d, d) fundamental matrices J_{0,s}
    exited: bool
    exit_time: float | None
    cond_J: float
    control: ControlPath

    @property
    def t(self) -> float:
        return float(self.times[-1])

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.states, axis=1)))


def _steps_per_interval(control: ControlPath, n_steps: int) -> list[int]:
    """Distribute RK4 substeps over control intervals, even counts so
    composite Simpson applies on each interval, at least 2 per interval."""
    lengths = np.diff(control.breakpoints)
    out = []
    for L in lengths:
        n = max(2, int(math.ceil(n_steps * L / control.horizon)))
        if n % 2:
            n += 1
        out.append(n)
    return out


def integrate_flow(
    model: ModelSpec,
    x,
    control: ControlPath,
    n_ball: int | None = None,
    n_steps: int = 2000,
    refine: bool = False,
    refine_tol: float = 1e-8,
    with_jacobian: bool = True,
) -> FlowResult:
    """Fixed-step RK4 for the controlled flow, jointly propagating the
    fundamental matrix dJ/ds = DX0(Phi) J from the identity.

    With refine=True the step is halved until two successive refinements
    agree to refine_tol in relative terminal state.
    """
    x = np.asarray(x, dtype=float)
    result = _integrate_once(model, x, control, n_ball, n_steps, with_jacobian)
    if refine:
        for _ in range(6):
            finer = _integrate_once(
                model, x, control, n_ball, 2 * n_steps, with_jacobian
            )
            scale = 1.0 + np.linalg.norm(finer.terminal)
            if np.linalg.norm(finer.terminal - result.terminal) <= refine_tol * scale:
                return finer
            n_steps *= 2
            result = finer
    return result


def _integrate_once(model, x, control, n_ball, n_steps, with_jacobian):
    d = model.d
    B = model.noise_matrix()
    f = compile_field(model.drift)
    Jf = compile_jacobian(model.drift)

    times = [0.0]
    states = [x.copy()]
    Js = [np.eye(d)]
    exited = False
    exit_time = None
    cond_max = 1.0

    state = x.copy()
    J = np.eye(d)
    s = 0.0
    if n_ball is not None and np.linalg.norm(state) >= n_ball:
        exited, exit_time = True, 0.0

    for (s0, s1), u, n_sub in zip(
        zip(control.breakpoints[:-1], control.breakpoints[1:]),
        control.values,
        _steps_per_interval(control, n_steps),
    ):
        h = (s1 - s0) / n_sub
        forcing = B @ u if B.size else np.zeros(d)
        for _ in range(n_sub):
            # overflow here is diagnosed as divergence, not a warning
            with np.errstate(over="ignore", invalid="ignore"):
                if with_jacobian:
                    state, J = _rk4_step_joint(f, Jf, state, J, forcing, h)
                else:
                    state = _rk4_step(f, state, forcing, h)
            s += h
            if not np.all(np.isfinite(state)):
                raise FlowDivergenceError(s)
            times.append(s)
            states.append(state.copy())
            if with_jacobian:
                Js.append(J.copy())
                c = np.linalg.cond(J)
                if c > cond_max:
                    cond_max = c
            if not exited and n_ball is not None and np.linalg.norm(state) >= n_ball:
                exited, exit_time = True, s

    return FlowResult(
        times=np.array(times),
        states=np.array(states),
        J0=np.array(Js) if with_jacobian else np.zeros((0, d, d)),
        exited=exited,
        exit_time=exit_time,
        cond_J=cond_max,
        control=control,
    )


def _rk4_step(f, x, forcing, h):
    k1 = f(x) + forcing
    k2 = f(x + 0.5 * h * k1) + forcing
    k3 = f(x + 0.5 * h * k2) + forcing
    k4 = f(x + h * k3) + forcing
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_step_joint(f, Jf, x, J, forcing, h):
    k1 = f(x) + forcing
    K1 = Jf(x) @ J
    x2 = x + 0.5 * h * k1
    k2 = f(x2) + forcing
    K2 = Jf(x2) @ (J + 0.5 * h * K1)
    x3 = x + 0.5 * h * k2
    k3 = f(x3) + forcing
    K3 = Jf(x3) @ (J + 0.5 * h * K2)
    x4 = x + h * k3
    k4 = f(x4) + forcing
    K4 = Jf(x4) @ (J + h * K3)
    return (
        x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4),
        J + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4),
    )


# --------------------------------------------------------------------
# Gramian.


def _simpson_weights(times: np.ndarray) -> np.ndarray:
    """Composite Simpson weights; the grid is piecewise uniform with an
    even number of steps per control interval by construction."""
    n = len(times) - 1
    w = np.zeros(len(times))
    i = 0
    while i < n:
        # find the extent of the uniform run starting at i
        h = times[i + 1] - times[i]
        j = i
        while j + 2 <= n and abs((times[j + 2] - times[j + 1]) - h) < 1e-12 * max(h, 1e-30):
            j += 1
        run = j - i + 1  # number of uniform steps from i
        if run % 2:
            run -= 1
        if run >= 2:
            for p in range(i, i + run, 2):
                w[p] += h / 3.0
                w[p + 1] += 4.0 * h / 3.0
                w[p + 2] += h / 3.0
            i += run
        else:
            w[i] += h / 2.0
            w[i + 1] += h / 2.0
            i += 1
    return w


def _jst_factors(flow: FlowResult, model: ModelSpec, cond_limit: float = 1e8):
    """J_{s,t} at every node: fundamental-matrix factorization, with a
    direct backward integration fallback when J_{0,s} is ill
    conditioned.  Never silently wrong: the fallback recomputes from the
    defining backward equation."""
    Jt = flow.J0[-1]
    if flow.cond_J <= cond_limit:
        inv = np.linalg.inv(flow.J0)
        return Jt[None, :, :] @ inv
    return _backward_jst(flow, model)


def _backward_jst(flow: FlowResult, model: ModelSpec) -> np.ndarray:
    """Integrate dK/ds = -K DX0(Phi_s) backward from K_t = Id, jointly
    re-integrating the state backward so RK4 midpoints are consistent."""
    d = model.d
    B = model.noise_matrix()
    f = compile_field(model.drift)
    Jf = compile_jacobian(model.drift)
    control = flow.control
    times = flow.times
    K = np.eye(d)
    out = np.zeros((len(times), d, d))
    out[-1] = K
    state = flow.states[-1].copy()
    # walk the stored grid backwards
    interval_idx = len(control.breakpoints) - 2
    for i in range(len(times) - 1, 0, -1):
        h = times[i] - times[i - 1]
        while interval_idx > 0 and times[i - 1] < control.breakpoints[interval_idx] - 1e-12:
            interval_idx -= 1
        u = control.values[interval_idx]
        forcing = B @ u if B.size else np.zeros(d)

        def g(xs, Ks):
            return -(f(xs) + forcing), -Ks @ Jf(xs)

        k1, K1 = g(state, K)
        k2, K2 = g(state + 0.5 * h * k1, K + 0.5 * h * K1)
        k3, K3 = g(state + 0.5 * h * k2, K + 0.5 * h * K2)
        k4, K4 = g(state + h * k3, K + h * K3)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        K = K + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
        out[i - 1] = K
    return out


class GramianError(RuntimeError):
    """Conditioning failure in both Gramian evaluation paths."""


def gramian(flow: FlowResult, model: ModelSpec) -> tuple[np.ndarray, float]:
    """Deterministic Malliavin matrix by composite Simpson quadrature of
    sum_m (J_{s,t} X_m)(J_{s,t} X_m)^T over the flow's own grid."""
    d = model.d
    if model.r == 0:
        return np.zeros((d, d)), 0.0
    B = model.noise_matrix()
    Jst = _jst_factors(flow, model)
    if not np.all(np.isfinite(Jst)):
        raise GramianError("non-finite J_{s,t} factors in both evaluation paths")
    cols = Jst @ B  # (n, d, r)
    integrand = cols @ np.transpose(cols, (0, 2, 1))  # (n, d, d)
    w = _simpson_weights(flow.times)
    M = np.tensordot(w, integrand, axes=(0, 0))
    M = 0.5 * (M + M.T)
    sigma_min = float(np.linalg.svd(M, compute_uv=False)[-1])
    return M, sigma_min


def gramian_threshold(M: np.ndarray) -> float:
    """Default invertibility threshold: 1e-8 * trace(M) / d."""
    d = len(M)
    return 1e-8 * float(np.trace(M)) / d


def k_rank(flow: FlowResult, model: ModelSpec, max_nodes: int = 200) -> int:
    """Numerical rank of the noise directions plus drift brackets
    sampled along the interior of the trajectory."""
    if model.r == 0:
        return 0
    cols = [model.noise_matrix()[:, j] for j in range(model.r)]
    brackets = [
        compile_field(lie_bracket(model.drift, Xf)) for Xf in model.noise_fields()
    ]
    interior = flow.states[1:-1]
    if len(interior):
        stride = max(1, len(interior) // max_nodes)
        sample = interior[::stride]
        for br in brackets:
            vals = br(sample)
            cols.extend(vals)
    A = np.array(cols).T
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > 1e-9 * s[0]))


# --------------------------------------------------------------------
# Control synthesis by direct shooting with variational gradients.


class SynthesisError(RuntimeError):
    pass


def _terminal_and_jac(model, x0, control: ControlPath, n_steps: int):
    """Terminal state and its Jacobian with respect to the per-piece
    control values, via J_{s,t} integrated over each piece."""
    flow = _integrate_once(model, x0, control, None, n_steps, True)
    B = model.noise_matrix()
    d = model.d
    Jt = flow.J0[-1]
    inv = np.linalg.inv(flow.J0)
    n_pieces = len(control.values)
    jac = np.zeros((d, n_pieces * model.r))
    # each piece's integral gets its own Simpson rule over its own node
    # range, with boundary nodes counted on both sides
    i0 = 0
    for p, n_sub in enumerate(_steps_per_interval(control, n_steps)):
        i1 = i0 + n_sub
        w = _simpson_weights(flow.times[i0 : i1 + 1])
        acc = np.tensordot(w, inv[i0 : i1 + 1], axes=(0, 0))
        jac[:, p * model.r : (p + 1) * model.r] = Jt @ acc @ B
        i0 = i1
    return flow.terminal, jac, flow


def synthesize_leg(
    model: ModelSpec,
    frm,
    to,
    t_leg: float,
    pieces: int = 6,
    seed: int = 0,
    eps_reach: float | None = None,
    n_steps: int = 600,
    max_starts: int = 6,
) -> ControlPath:
    """Piecewise-constant control steering frm to to over t_leg, found
    by damped least squares on the terminal error with the variational
    flow supplying gradients.  Raises SynthesisError after the
    multistart budget."""
    if t_leg <= 0:
        raise ValueError("t_leg must be positive")
    if pieces < 2:
        raise ValueError("need at least 2 control pieces")
    frm = np.asarray(frm, dtype=float)
    to = np.asarray(to, dtype=float)
    if eps_reach is None:
        eps_reach = 1e-5 * (1.0 + np.linalg.norm(to))
    r = model.r
    if r == 0:
        raise SynthesisError("no control directions available")

    B = model.noise_matrix()
    # elliptic shortcut: with full-rank constant noise and zero drift the
    # constant control (to - frm)/t is already exact
    if model.drift.is_zero() and np.linalg.matrix_rank(B) == model.d:
        u, _, _, _ = np.linalg.lstsq(B, (to - frm) / t_leg, rcond=None)
        return ControlPath.uniform(t_leg, np.tile(u, (pieces, 1)))

    ridge = 1e-6

    def pack(control_values):
        return ControlPath.uniform(t_leg, control_values.reshape(pieces, r))

    def residual(uflat):
        term, _, _ = _terminal_and_jac(model, frm, pack(uflat), n_steps)
        return np.concatenate([term - to, ridge * uflat])

    def jac(uflat):
        _, J, _ = _terminal_and_jac(model, frm, pack(uflat), n_steps)
        return np.vstack([J, ridge * np.eye(len(uflat))])

    rng = np.random.default_rng(seed)
    scale0 = np.linalg.norm(to - frm) / t_leg + 1.0
    best = None
    best_err = np.inf
    for start in range(max_starts):
        if start == 0:
            u0 = np.zeros(pieces * r)
        else:
            u0 = rng.normal(scale=scale0 * start, size=pieces * r)
        try:
            sol = least_squares(
                residual, u0, jac=jac, method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-12,
                max_nfev=200,
            )
        except FlowDivergenceError:
            continue
        control = pack(sol.x)
        try:
            check = integrate_flow(
                model, frm, control, n_steps=2 * n_steps, with_jacobian=False
            )
        except FlowDivergenceError:
            continue
        err = float(np.linalg.norm(check.terminal - to))
        if err < best_err:
            best, best_err = control, err
        if err <= eps_reach:
            return control
    raise SynthesisError(
        f"no control found steering {frm} to {to} in t={t_leg}"
        f" (best terminal error {best_err:.3g} > {eps_reach:.3g})"
    )


# --------------------------------------------------------------------
# Certificates.


@dataclass(frozen=True)
class ReachabilityCertificate:
    model_name: str
    model_hash: str
    x: np.ndarray
    z: np.ndarray
    t: float
    waypoints: list
    control: ControlPath | None
    terminal_error: float | None
    sigma_min: float | None
    K_rank: int | None
    ball_n: int | None
    verdict: str  # "positive" | "inconclusive"
    stage: str | None = None  # failing stage when inconclusive
    detail: str | None = None
    dwell: tuple[float, float] | None = None  # (start, duration) at the equilibrium

    def to_json(self) -> dict:
        return {
            "model": self.model_name,
            "model_hash": self.model_hash,
            "x": list(map(float, self.x)),
            "z": list(map(float, self.z)),
            "t": float(self.t),
            "waypoints": [list(map(float, w)) for w in self.waypoints],
            "control": self.control.to_json() if self.control else None,
            "terminal_error": self.terminal_error,
            "sigma_min": self.sigma_min,
            "K_rank": self.K_rank,
            "ball_n": self.ball_n,
            "verdict": self.verdict,
            "stage": self.stage,
            "detail": self.detail,
            "dwell": list(self.dwell) if self.dwell else None,
        }


@dataclass
class CertifyOptions:
    via_equilibrium: bool = False
    equilibrium: EquilibriumPoint | None = None
    pieces: int = 8
    seed: int = 0
    eps_reach: float | None = None
    dwell_frac: float = 0.25
    twist_budget: int = 12
    n_steps: int = 600
    search_box_pad: float = 3.0


def _inconclusive(model, x, z, t, stage, detail, waypoints=()):
    return ReachabilityCertificate(
        model_name=model.name,
        model_hash=model.spec_hash(),
        x=np.asarray(x, float),
        z=np.asarray(z, float),
        t=t,
        waypoints=list(waypoints),
        control=None,
        terminal_error=None,
        sigma_min=None,
        K_rank=None,
        ball_n=None,
        verdict="inconclusive",
        stage=stage,
        detail=detail,
    )


def _slab_waypoints(basis: PositivityBasis, x, target, coeffs, count, rng):
    """Waypoints in nested dyadic slabs between x and the target: the
    one-sided coordinates advance through disjoint windows scaled by the
    smallest one-sided coefficient, so each waypoint is strictly
    reachable from its predecessor."""
    Bmat = basis.matrix()
    k = basis.k
    d = basis.dim
    lam = float(np.min(coeffs[k:])) if k < d else 1.0
    alphas = np.concatenate([[0.0], np.cumsum(0.5 ** np.arange(1, count + 2))])
    points = []
    for l in range(count):
        frac = (l + 1) / (count + 1)
        c = np.zeros(d)
        c[:k] = coeffs[:k] * frac
        if k < d:
            lo, hi = alphas[l] * lam, alphas[l + 1] * lam
            c[k:] = lo + (0.3 + 0.4 * rng.random(d - k)) * (hi - lo)
        points.append(np.asarray(x, float) + Bmat @ c)
    return points


def _select_twist_points(model, basis, x, target, coeffs, options, rng):
    """Accumulate waypoints until the noise-plus-bracket family at the
    collected points spans the state space, or the budget runs out."""
    if twist_rank_check(model, [np.asarray(x, float)]):
        return [], True
    points = []
    for count in range(1, options.twist_budget + 1):
        points = _slab_waypoints(basis, x, target, coeffs, count, rng)
        if twist_rank_check(model, points):
            return points, True
    return points, False


def certify(
    model: ModelSpec,
    basis: PositivityBasis,
    x,
    z,
    t: float,
    options: CertifyOptions | None = None,
) -> ReachabilityCertificate:
    """Assemble a machine-checkable positivity certificate: membership,
    twist waypoints, per-leg control synthesis, full-path Gramian."""
    options = options or CertifyOptions()
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    rng = np.random.default_rng(options.seed)

    # --- membership stage
    dwell = None
    if options.via_equilibrium:
        if options.equilibrium is not None:
            equilibria = [options.equilibrium]
        else:
            pad = options.search_box_pad
            lo = np.minimum(x, z) - pad
            hi = np.maximum(x, z) + pad
            equilibria = find_equilibria(
                model, list(zip(lo, hi)), n_starts=64, seed=options.seed,
                tol=1e-8,
            )
        # Equilibria can come in families (whole curves of them), and a
        # candidate too close to x gives waypoints where the bracket
        # family degenerates; keep trying chains until one passes the
        # twist check.
        chain = None
        twist_points = None
        for candidate in iter_chains(model, basis, x, z, equilibria):
            points, ok = _select_twist_points(
                model, basis, x, candidate.y, candidate.coeffs_xy, options, rng
            )
            if ok:
                chain = candidate
                twist_points = points
                break
        if chain is None:
            return _inconclusive(
                model, x, z, t, "membership",
                "no equilibrium chains x to z through the positivity regions"
                " with a nondegenerate bracket family along the way",
            )
        y = chain.y
        coeffs_first = chain.coeffs_xy
        target_first = y
    else:
        member, coeffs = d_membership(basis, x, z)
        if not member:
            return _inconclusive(
                model, x, z, t, "membership",
                "target is not strictly inside the positivity region of x",
            )
        y = None
        coeffs_first = coeffs
        target_first = z

        # --- twist stage
        twist_points, ok = _select_twist_points(
            model, basis, x, target_first, coeffs_first, options, rng
        )
        if not ok:
            return _inconclusive(
                model, x, z, t, "twist",
                f"bracket family rank < d after {options.twist_budget} waypoint sets",
            )

    # --- time budget and waypoint list
    if options.via_equilibrium:
        transit = [x, *twist_points, y]
        t_dwell = options.dwell_frac * t
        t_final = 0.5 * (t - t_dwell)
        t_transit_total = t - t_dwell - t_final
    else:
        transit = [x, *twist_points, z]
        t_dwell = 0.0
        t_final = 0.0
        t_transit_total = t
    n_legs = len(transit) - 1
    t_leg = t_transit_total / n_legs

    # --- synthesis stage
    waypoints = list(transit[1:])
    controls: list[ControlPath] = []
    current = x
    try:
        for target in transit[1:]:
            leg = _synthesize_escalating(
                model, current, target, t_leg, options
            )
            controls.append(leg)
            current = integrate_flow(
                model, current, leg, n_steps=options.n_steps, with_jacobian=False
            ).terminal
        if options.via_equilibrium:
            _, u_eq, _ = _equilibrium_control(model, current)
            dwell_start = sum(c.horizon for c in controls)
            controls.append(ControlPath.constant(t_dwell, u_eq))
            dwell = (dwell_start, t_dwell)
            leg = _synthesize_escalating(model, current, z, t_final, options)
            controls.append(leg)
    except SynthesisError as exc:
        return _inconclusive(model, x, z, t, "synthesis", str(exc), waypoints)

    control = controls[0]
    for c in controls[1:]:
        control = control.concat(c)

    # --- gramian stage
    try:
        flow = integrate_flow(
            model, x, control, n_steps=max(2000, 2 * options.n_steps),
            refine=True, with_jacobian=True,
        )
        M, sigma_min = gramian(flow, model)
    except (FlowDivergenceError, GramianError) as exc:
        return _inconclusive(model, x, z, t, "gramian", str(exc), waypoints)

    rank = k_rank(flow, model)
    terminal_error = float(np.linalg.norm(flow.terminal - z))
    eps_reach = options.eps_reach
    if eps_reach is None:
        eps_reach = 1e-5 * (1.0 + np.linalg.norm(z))
    eps_gram = gramian_threshold(M)
    ball_n = int(math.ceil(flow.max_norm())) + 1

    ok = terminal_error <= eps_reach and sigma_min >= eps_gram and rank == model.d
    return ReachabilityCertificate(
        model_name=model.name,
        model_hash=model.spec_hash(),
        x=x,
        z=z,
        t=t,
        waypoints=waypoints,
        control=control,
        terminal_error=terminal_error,
        sigma_min=sigma_min,
        K_rank=rank,
        ball_n=ball_n,
        verdict="positive" if ok else "inconclusive",
        stage=None if ok else "verdict",
        detail=None if ok else (
            f"terminal_error={terminal_error:.3g} (<= {eps_reach:.3g} needed), "
            f"sigma_min={sigma_min:.3g} (>= {eps_gram:.3g} needed), "
            f"K_rank={rank} (d={model.d} needed)"
        ),
        dwell=dwell,
    )


def _equilibrium_control(model: ModelSpec, y):
    from .equilibria import is_equilibrium

    ok, u, resid = is_equilibrium(model, y, tol=1e-6)
    if not ok:
        raise SynthesisError(
            f"dwell point {y} is not an equilibrium (residual {resid:.3g})"
        )
    return ok, u, resid


def _synthesize_escalating(model, frm, to, t_leg, options: CertifyOptions):
    last_exc = None
    for factor in (1, 2, 4):
        try:
            return synthesize_leg(
                model, frm, to, t_leg,
                pieces=options.pieces * factor,
                seed=options.seed + factor,
                eps_reach=options.eps_reach,
                n_steps=options.n_steps,
            )
        except SynthesisError as exc:
            last_exc = exc
    raise last_exc
