"""Session assignment and power allocation minimizing the worst completion time.

The optimizer works on the decision bundle of the relaxed scheduling
problem: assignment matrix ``a`` (UE k active in session i), powers
``eta``, per-session data split ``S_split``, session durations ``t``, the
rate/time bracket variables ``r_hat``/``r_tilde``/``t_hat``/``t_tilde``
and the worst-completion epigraph scalar ``q``.  Two coupling
requirements are moved into the objective as penalties weighted by
``lambda * gamma1`` (promised rate-time products must not exceed the data
split) and ``lambda * gamma2`` (assignments must be binary); each
iteration minimizes the convex majorant of that penalized objective over
the convexified constraint set, expanded at the previous iterate.

Internally everything is scaled: data in Mbit, rates in Mbit/s, times in
seconds.  Penalty values, objectives and tolerances quoted by this module
are in those units.

Subproblem size for K UEs (free assignment, every pair carrying
rate-time mass at the expansion): the cone program holds
``29 K^2 + K + 2`` variables (7 K^2 grid variables, 22 K^2 auxiliaries
from cone liftings, K durations, the epigraph scalar and one shared
pinned constant), ``16 K^2 + 3 K`` equality rows, ``7 K^2 + K + 1``
inequality rows, ``5 K^2`` second-order cones and ``K^2`` exponential
cones.  Every pair that is product-degenerate at the expansion point
(see ``DEGENERATE_MASS``) trades its rate-lower/product machinery for
three pins, changing the tally by (-12 vars, -6 eq, -3 ineq, -3 soc).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import conic
from .channel import NetworkConfig, UEProfile, achievable_rate, session_sinr
from .conic import ConeProgramBuilder, LinExpr, SolveStatus
from .surrogates import (
    penalty_V1,
    penalty_V2,
    penalty_V1_majorant,
    penalty_V2_majorant,
    rate_lower_surrogate,
    rate_upper_surrogate,
)

__all__ = [
    "MEGABIT",
    "ScheduleVars",
    "AlgParams",
    "Schedule",
    "ScaRecord",
    "ScaResult",
    "InfeasibleInstanceError",
    "ScaError",
    "RoundingError",
    "initial_point",
    "build_subproblem",
    "sca_solve",
    "round_and_polish",
    "validate_schedule",
    "solve_session_schedule",
    "penalized_objective",
    "fhat_residuals",
]

MEGABIT = 1e6  # bits per internal data/rate unit

# a pair whose expansion brackets carry less combined rate-time mass than
# this is treated as idle when convexifying the data-product constraint
# (active pairs sit at t_hat >= T_c ~ 1e-3 s, far above this)
DEGENERATE_MASS = 1e-6


def _balance_scale(x0: float, y0: float) -> float:
    """Coordinate scale equalizing the two factors of a product bound."""
    f = 1e-6
    return float(np.sqrt((abs(x0) + f) / (abs(y0) + f)))


class InfeasibleInstanceError(RuntimeError):
    """No feasible schedule exists for this instance (tight time windows)."""


class ScaError(RuntimeError):
    """A subproblem solve failed inside the iteration loop."""


class RoundingError(RuntimeError):
    """Assignment could not be rounded/repaired into a valid schedule."""


@dataclass
class ScheduleVars:
    """Relaxed decision bundle (scaled units: Mbit, Mbit/s, seconds)."""

    a: np.ndarray  # K x K in [0,1]
    eta: np.ndarray  # K x K nonnegative
    S_split: np.ndarray  # K x K, Mbit
    t: np.ndarray  # K session durations (s)
    r_hat: np.ndarray  # K x K rate lower brackets (Mbit/s)
    r_tilde: np.ndarray  # K x K rate upper brackets (Mbit/s)
    t_hat: np.ndarray  # K x K time lower brackets (s)
    t_tilde: np.ndarray  # K x K time upper brackets (s)
    q: float  # worst-completion epigraph (s)

    def copy(self) -> "ScheduleVars":
        return ScheduleVars(
            self.a.copy(), self.eta.copy(), self.S_split.copy(), self.t.copy(),
            self.r_hat.copy(), self.r_tilde.copy(), self.t_hat.copy(),
            self.t_tilde.copy(), float(self.q),
        )


@dataclass(frozen=True)
class AlgParams:
    """Penalty weights and loop controls for the session optimizer."""

    penalty_lambda: float = 1.0
    gamma1: float = 0.1  # weighs the data-delivery penalty
    gamma2: float = 0.01  # weighs the binariness penalty
    epsilon: float = 1e-3  # relative objective-change stop + penalty target
    max_iters: int = 100
    round_threshold: float = 0.5
    n_starts: int = 3
    solver_tol: float = 1e-8
    lambda_max_factor: float = 1e3  # escalation cap (x10 steps)

    def __post_init__(self):
        if self.penalty_lambda < 0:
            raise ValueError("penalty_lambda must be nonnegative")
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("penalty weights must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not (0.0 < self.round_threshold < 1.0):
            raise ValueError("round_threshold must lie in (0,1)")


@dataclass
class Schedule:
    """A concrete (binary) session schedule ready for transmission."""

    a: np.ndarray  # K x K binary
    durations: np.ndarray  # t_i, seconds
    eta: np.ndarray  # K x K powers
    payload_bits: np.ndarray  # K x K, bits
    completion_s: np.ndarray  # per-UE completion times
    objective_s: float  # max completion

    @property
    def session_sets(self) -> list[list[int]]:
        return [list(np.flatnonzero(self.a[:, i])) for i in range(self.a.shape[1])]


@dataclass(frozen=True)
class ScaRecord:
    iteration: int
    L: float
    q: float
    V1: float
    V2: float
    status: str


@dataclass
class ScaResult:
    iterates: list[ScheduleVars]
    records: list[ScaRecord]
    final: ScheduleVars
    V1: float
    V2: float
    converged: bool
    penalty_lambda: float


def _data_scaled(profiles: list[UEProfile]) -> np.ndarray:
    return np.array([p.data_bits for p in profiles]) / MEGABIT


def _session_rates(a, eta, profiles, config) -> np.ndarray:
    """Scaled rate matrix R[k, i] for active counts fixed by the quota rule."""
    K = config.K
    R = np.zeros((K, K))
    for i in range(K):
        for k in range(K):
            if a[k, i] > 0:
                sinr = session_sinr(eta[:, i], k, K - i, profiles, config)
                R[k, i] = achievable_rate(sinr, config) / MEGABIT
    return R


def penalized_objective(vars: ScheduleVars, params: AlgParams) -> float:
    """True penalized objective L = q + lambda (g1 V1 + g2 V2)."""
    v1 = penalty_V1(vars.r_tilde, vars.t_tilde, vars.S_split)
    v2 = penalty_V2(vars.a)
    return vars.q + params.penalty_lambda * (params.gamma1 * v1 + params.gamma2 * v2)


def _balanced_v1_majorant(r_tilde, t_tilde, S, r0, t0) -> float:
    """Delivery-penalty majorant exactly as the subproblem encodes it."""
    total = 0.0
    for rt, tt, s_, rt0, tt0 in zip(
        np.ravel(r_tilde), np.ravel(t_tilde), np.ravel(S), np.ravel(r0), np.ravel(t0)
    ):
        c = _balance_scale(rt0, tt0)
        X, Y, X0, Y0 = rt / c, tt * c, rt0 / c, tt0 * c
        d = (X + Y) - (X0 + Y0)
        e = (X - Y) - (X0 - Y0)
        total += 0.25 * d * d + 0.5 * (X0 + Y0) * d - 0.5 * (X0 - Y0) * e + rt0 * tt0 - s_
    return total


def _project_durations(t: np.ndarray, config: NetworkConfig) -> np.ndarray:
    """Clip durations into [T_c, .) and shave proportional headroom to fit T_large."""
    t = np.maximum(t, config.T_c_small)
    excess = float(np.sum(t)) - config.T_c_large
    if excess > 0:
        headroom = t - config.T_c_small
        total = float(np.sum(headroom))
        if total < excess - 1e-12:
            raise InfeasibleInstanceError("time horizon too small for K sessions")
        t = t - headroom * (excess / total)
    return t


def _calibrate_powers(
    a_col: np.ndarray,
    target_rates: np.ndarray,
    K_i: int,
    profiles: list[UEProfile],
    config: NetworkConfig,
) -> np.ndarray:
    """Powers achieving the given per-UE rates exactly within one session.

    Target SINRs fix each power as an affine function of the total power,
    so the total solves a scalar linear equation.  Targets must be jointly
    achievable (they are, whenever they were obtained by scaling down an
    already-feasible rate vector).
    """
    K = config.K
    gain = np.zeros(K)
    interf = np.zeros(K)
    for k in range(K):
        p = profiles[k]
        gain[k] = (config.M - K_i) * config.rho * p.sigma2
        interf[k] = config.rho * (p.beta - p.sigma2)
    sinr_t = np.where(
        a_col > 0, 2.0 ** (target_rates * MEGABIT / (config.prelog * config.B)) - 1.0, 0.0
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(a_col > 0, sinr_t * interf / gain, 0.0)
        offset = np.where(a_col > 0, sinr_t / gain, 0.0)
    c1 = float(np.sum(slope))
    c0 = float(np.sum(offset))
    if c1 >= 1.0 - 1e-12:
        raise InfeasibleInstanceError("target rates not jointly achievable")
    total = c0 / (1.0 - c1)
    if total > 1.0 + 1e-9:
        raise InfeasibleInstanceError("target rates exceed the power budget")
    return np.minimum(sinr_t * (interf * total + 1.0) / np.maximum(gain, 1e-300), 1.0)


def _exact_point(
    a: np.ndarray,
    eta: np.ndarray,
    profiles: list[UEProfile],
    config: NetworkConfig,
) -> ScheduleVars:
    """Complete (a, eta) into a relaxed-feasible bundle with tight brackets.

    Durations solve the per-UE data-balance system exactly when possible:
    the UE finishing in session j receives all of its data by the end of
    session j at the current rates.  If the resulting durations violate
    the time windows, they are projected, the data split is relaxed to a
    proportional fill, and the powers are recalibrated so the achieved
    rates match the relaxed split exactly; without the recalibration the
    upper rate brackets would pin a large delivery overshoot into the
    starting point.
    """
    K = config.K
    S_k = _data_scaled(profiles)
    R = _session_rates(a, eta, profiles, config)
    finish = a.sum(axis=1).astype(int)  # j_k: last active session (1-based)
    order = np.argsort(finish, kind="stable")
    t = np.zeros(K)
    for j, k in enumerate(order):
        if finish[k] != j + 1:
            raise ValueError("assignment matrix is not a valid nested structure")
        if R[k, j] <= 0:
            raise InfeasibleInstanceError(
                f"UE {k} has zero rate in its finishing session {j + 1}"
            )
        rem = S_k[k] - float(R[k, :j] @ t[:j])
        t[j] = rem / R[k, j]
    t_proj = _project_durations(t, config)
    exact = bool(np.allclose(t_proj, t, rtol=0, atol=1e-15))
    t = t_proj

    if exact:
        S = R * a * t[np.newaxis, :]
        eta_cal = eta.copy()
    else:
        active_rate_time = R * a * t[np.newaxis, :]
        cap = active_rate_time.sum(axis=1)
        if np.any(cap < S_k * (1.0 - 1e-9)):
            raise InfeasibleInstanceError("projected durations cannot carry the data")
        with np.errstate(invalid="ignore", divide="ignore"):
            S = active_rate_time * (S_k / np.maximum(cap, 1e-300))[:, np.newaxis]
        S[~np.isfinite(S)] = 0.0
        eta_cal = np.zeros_like(eta)
        for i in range(K):
            targets = np.where(a[:, i] > 0, S[:, i] / t[i], 0.0)
            eta_cal[:, i] = _calibrate_powers(a[:, i], targets, K - i, profiles, config)
        R = _session_rates(a, eta_cal, profiles, config)
        # rates now reproduce the relaxed split to rounding; rebuild the
        # split from them so the brackets are exactly consistent
        S = R * a * t[np.newaxis, :]
    t_act = a * t[np.newaxis, :]
    q = float(np.max(t_act.sum(axis=1)))
    return ScheduleVars(
        a=a.astype(float).copy(),
        eta=eta_cal,
        S_split=S,
        t=t,
        r_hat=R.copy(),
        r_tilde=R.copy(),
        t_hat=t_act.copy(),
        t_tilde=t_act.copy(),
        q=q,
    )


def initial_point(
    profiles: list[UEProfile],
    config: NetworkConfig,
    params: AlgParams,
    seed: int,
) -> ScheduleVars:
    """Relaxed-feasible starting bundle from a seed-perturbed finishing order.

    UEs are ordered by ascending data size with a random rank perturbation
    (any order has positive probability, ascending stays the most likely);
    the UE finishing in session j is active in sessions 1..j, power is
    split evenly among active UEs, and durations/brackets are completed by
    :func:`_exact_point`.
    """
    K = config.K
    rng = np.random.default_rng(seed)
    S_k = _data_scaled(profiles)
    base_rank = np.argsort(np.argsort(S_k, kind="stable"), kind="stable").astype(float)
    scores = base_rank + rng.normal(0.0, 0.75, size=K)
    order = np.argsort(scores, kind="stable")  # order[j] finishes in session j+1
    a = np.zeros((K, K))
    for j, k in enumerate(order):
        a[k, : j + 1] = 1.0
    eta = a / a.sum(axis=0, keepdims=True)
    return _exact_point(a, eta, profiles, config)


@dataclass
class SubproblemHandle:
    """A built convex subproblem plus the index maps to read it back."""

    program: conic.ConeProgram
    expansion: ScheduleVars
    params: AlgParams
    idx: dict[str, np.ndarray]
    idx_q: int
    fixed_a: np.ndarray | None
    counts: dict[str, int]

    def extract(self, sol: conic.ConeSolution) -> ScheduleVars:
        x = sol.x

        def grid(name):
            return x[self.idx[name]]

        if self.fixed_a is None:
            a = grid("a")
        else:
            a = self.fixed_a.astype(float).copy()
        return ScheduleVars(
            a=a,
            eta=grid("eta"),
            S_split=grid("S"),
            t=x[self.idx["t"]].copy(),
            r_hat=grid("r_hat"),
            r_tilde=grid("r_tilde"),
            t_hat=grid("t_hat"),
            t_tilde=grid("t_tilde"),
            q=float(x[self.idx_q]),
        )

    def objective_at(self, vars: ScheduleVars) -> float:
        """Majorized objective at an arbitrary bundle (matches program obj)."""
        p, e = self.params, self.expansion
        v1 = _balanced_v1_majorant(vars.r_tilde, vars.t_tilde, vars.S_split,
                                   e.r_tilde, e.t_tilde)
        if self.fixed_a is None:
            v2 = penalty_V2_majorant(vars.a, e.a)
        else:
            v2 = 0.0
        return vars.q + p.penalty_lambda * (p.gamma1 * v1 + p.gamma2 * v2)


def build_subproblem(
    current: ScheduleVars,
    params: AlgParams,
    profiles: list[UEProfile],
    config: NetworkConfig,
    fixed_a: np.ndarray | None = None,
) -> SubproblemHandle:
    """Assemble one convexified subproblem expanded at ``current``.

    With ``fixed_a`` the assignment is frozen to a binary matrix: the
    assignment variables, quota rows and binariness penalty disappear and
    the assignment-duration products become exact linear constraints
    (used by the polishing step).
    """
    K = config.K
    if config.M <= config.K:
        raise InfeasibleInstanceError("session scheme needs M > K for a ZF gain")
    S_k = _data_scaled(profiles)
    lam, g1, g2 = params.penalty_lambda, params.gamma1, params.gamma2

    b = ConeProgramBuilder()
    idx: dict[str, np.ndarray] = {}

    def grid_vars(name, **kw):
        arr = np.array(
            [[b.new_var(f"{name}[{k},{i}]", **kw) for i in range(K)] for k in range(K)]
        )
        idx[name] = arr
        return arr

    if fixed_a is None:
        ia = grid_vars("a", lb=0.0, ub=1.0)
        for k in range(K):
            # first session serves everyone
            b.add_eq(b.var(ia[k, 0]), 1.0)
    else:
        ia = None
    ie = grid_vars("eta", lb=0.0, ub=1.0)
    iS = grid_vars("S", lb=0.0)
    # all four brackets are sign-constrained: with r_hat and t_hat both
    # negative their product would let an idle pair "carry" unbounded
    # data through the S <= r_hat * t_hat gate, and an unbounded-below
    # t_hat wanders freely for idle pairs, poisoning later expansions
    ir_hat = grid_vars("r_hat", lb=0.0)
    ir_til = grid_vars("r_tilde", lb=0.0)
    it_hat = grid_vars("t_hat", lb=0.0)
    it_til = grid_vars("t_tilde", lb=0.0)
    it = np.array([b.new_var(f"t[{i}]", lb=config.T_c_small) for i in range(K)])
    idx["t"] = it
    iq = b.new_var("q", lb=0.0)

    V = b.var
    obj = V(iq)

    if fixed_a is None:
        for i in range(1, K):
            # one UE leaves per session
            b.add_eq(sum(V(ia[k, i]) for k in range(K)), float(K - i))
            for k in range(K):
                b.add_ineq(V(ia[k, i]) - V(ia[k, i - 1]), 0.0)
    for i in range(K):
        b.add_ineq(sum(V(ie[k, i]) for k in range(K)), 1.0)
        if fixed_a is None:
            for k in range(K):
                b.add_ineq(V(ie[k, i]) - V(ia[k, i]), 0.0)
        else:
            for k in range(K):
                # inactive pairs carry no power; pin through the equality
                # cone so the subproblem keeps a strict interior elsewhere
                if fixed_a[k, i] == 0.0:
                    b.add_eq(V(ie[k, i]), 0.0)
    for k in range(K):
        b.add_eq(sum(V(iS[k, i]) for i in range(K)), float(S_k[k]))
        b.add_ineq(sum(V(it_til[k, i]) for i in range(K)) - V(iq), 0.0)
    b.add_ineq(sum(V(i_) for i_ in it), config.T_c_large)

    def product_upper(x_expr, y_expr, x0, y0, slack_name):
        """Convex expr >= x*y, tight at (x0, y0), in balanced coordinates.

        The tangent majorant family x*y <= 1/4 (X+Y)^2 - ... is applied
        to X = x/c, Y = c*y with c = sqrt(x0/y0), and centered at the
        expansion.  Balancing matters: rates and durations differ by
        orders of magnitude, and on raw scales the curvature term would
        shrink the implicit trust region along product-preserving moves
        to nothing.  Centering keeps all constants at product scale.
        """
        c = _balance_scale(x0, y0)
        X0, Y0 = x0 / c, y0 * c
        X = x_expr * (1.0 / c)
        Y = y_expr * c
        s = b.new_var(slack_name, lb=0.0)
        b.add_convex_quadratic(X + Y - (X0 + Y0), V(s))
        return (
            V(s) * 0.25
            + (X + Y - (X0 + Y0)) * (0.5 * (X0 + Y0))
            - (X - Y - (X0 - Y0)) * (0.5 * (X0 - Y0))
            + LinExpr(const=x0 * y0)
        )

    def product_lower(x_expr, y_expr, x0, y0, slack_name):
        """Concave expr <= x*y, tight at (x0, y0), balanced as above."""
        c = _balance_scale(x0, y0)
        X0, Y0 = x0 / c, y0 * c
        X = x_expr * (1.0 / c)
        Y = y_expr * c
        s = b.new_var(slack_name, lb=0.0)
        b.add_convex_quadratic(X - Y - (X0 - Y0), V(s))
        return (
            V(s) * (-0.25)
            - (X - Y - (X0 - Y0)) * (0.5 * (X0 - Y0))
            + (X + Y - (X0 + Y0)) * (0.5 * (X0 + Y0))
            + LinExpr(const=x0 * y0)
        )

    for i in range(K):
        K_i = K - i
        for k in range(K):
            inactive_fixed = fixed_a is not None and fixed_a[k, i] == 0.0
            # pairs carrying no rate-time mass at the expansion make the
            # product-bound row interior-free (it would pin r_hat = t_hat
            # exactly); replace it by the affine subset S=0, r_hat=0,
            # t_hat>=0, which contains the expansion and keeps the true
            # product constraint satisfied
            degenerate = (
                abs(current.r_hat[k, i]) + abs(current.t_hat[k, i]) <= DEGENERATE_MASS
            )
            eta_col = current.eta[:, i]
            sum_eta = sum(V(ie[kk, i]) for kk in range(K))

            if inactive_fixed:
                # power is pinned to zero, so the true rate is zero: the
                # rate brackets and the data split collapse without cones
                b.add_eq(V(ir_hat[k, i]), 0.0)
                b.add_eq(V(iS[k, i]), 0.0)
            else:
                up = rate_upper_surrogate(eta_col, k, K_i, profiles, config)
                c_rate = up.scale / MEGABIT  # Mbit/s units
                ups_expr = V(ie[k, i]) * up.gain
                phi_expr = sum_eta * up.interf + 1.0

                # rate upper bracket: r_tilde >= convex bound, log via exp cone
                v = b.new_var(f"v[{k},{i}]")
                b.add_log_lower(V(v), phi_expr)
                b.add_ineq(
                    (ups_expr + phi_expr) * (c_rate / up.denom0)
                    - V(v) * c_rate
                    - V(ir_til[k, i]),
                    -c_rate * up.const,
                )

                if degenerate:
                    # the pinned triple trivially satisfies the true
                    # rate/time brackets and the product gate, and the
                    # equality cone keeps a strict interior elsewhere
                    b.add_eq(V(iS[k, i]), 0.0)
                    b.add_eq(V(ir_hat[k, i]), 0.0)
                    b.add_eq(V(it_hat[k, i]), 0.0)
                else:
                    low = rate_lower_surrogate(eta_col, k, K_i, profiles, config)
                    # rate lower bracket: r_hat <= concave bound; the
                    # 1/Upsilon term enters through the normalized
                    # hyperbolic lift u >= ups0 / Upsilon with cone
                    # members kept near unit scale
                    u = b.new_var(f"u[{k},{i}]", lb=0.0)
                    norm = max(low.upsilon0, 1.0)
                    b.add_hyperbolic(
                        ups_expr * (1.0 / norm), V(u), rhs=low.upsilon0 / norm
                    )
                    b.add_ineq(
                        V(ir_hat[k, i])
                        + (V(u) * low.inv_coef + phi_expr * low.phi_coef) * c_rate,
                        c_rate * low.const,
                    )

            a0 = current.a[k, i]
            t0 = current.t[i]
            if fixed_a is None:
                # time brackets around the assignment-duration product;
                # pinned pairs satisfy the lower bracket trivially
                if not degenerate:
                    lower = product_lower(V(ia[k, i]), V(it[i]), a0, t0, f"s2[{k},{i}]")
                    b.add_ineq(V(it_hat[k, i]) - lower, 0.0)
                upper = product_upper(V(ia[k, i]), V(it[i]), a0, t0, f"s3[{k},{i}]")
                b.add_ineq(upper - V(it_til[k, i]), 0.0)
            elif fixed_a[k, i] == 0.0:
                b.add_eq(V(it_hat[k, i]), 0.0)
            else:
                b.add_ineq(V(it_hat[k, i]) - V(it[i]), 0.0)
                b.add_ineq(V(it[i]) - V(it_til[k, i]), 0.0)

            if not inactive_fixed and not degenerate:
                # data split below the promised rate-time product
                rh0, th0 = current.r_hat[k, i], current.t_hat[k, i]
                lower = product_lower(
                    V(ir_hat[k, i]), V(it_hat[k, i]), rh0, th0, f"s4[{k},{i}]"
                )
                b.add_ineq(V(iS[k, i]) - lower, 0.0)

            # delivery penalty majorant
            rt0, tt0 = current.r_tilde[k, i], current.t_tilde[k, i]
            upper = product_upper(
                V(ir_til[k, i]), V(it_til[k, i]), rt0, tt0, f"s1[{k},{i}]"
            )
            obj = obj + (upper - V(iS[k, i])) * (lam * g1)

            # binariness penalty majorant (affine)
            if fixed_a is None:
                obj = obj + (
                    V(ia[k, i]) * (1.0 - 2.0 * a0) + LinExpr(const=a0 * a0)
                ) * (lam * g2)

    b.minimize(obj)
    program = b.build()
    counts = {
        "vars": program.n_vars,
        "eq_rows": program.A_eq.shape[0],
        "ineq_rows": program.A_in.shape[0],
        "soc_blocks": len(program.soc_blocks),
        "exp_blocks": len(program.exp_blocks),
    }
    return SubproblemHandle(
        program=program,
        expansion=current.copy(),
        params=params,
        idx=idx,
        idx_q=iq,
        fixed_a=None if fixed_a is None else fixed_a.copy(),
        counts=counts,
    )


def _solve_subproblem(program: conic.ConeProgram, tol: float) -> tuple[conic.ConeSolution, str]:
    """Solve one subproblem, certifying near-optimal stalls independently.

    Interior-point end games on these programs occasionally stop a hair
    short of the requested gap; such solutions are accepted only when the
    engine-independent KKT checker puts every residual within 10x of the
    tolerance.
    """
    sol = conic.solve(program, tol=tol)
    if sol.status is SolveStatus.OPTIMAL:
        return sol, "optimal"
    if sol.status is SolveStatus.ITERATION_LIMIT and np.all(np.isfinite(sol.x)):
        report = conic.check_kkt(program, sol)
        if report.max_residual <= 10.0 * tol:
            return sol, "near-optimal"
    raise ScaError(f"subproblem solve failed: {sol.status.value}")


def sca_solve(
    profiles: list[UEProfile],
    config: NetworkConfig,
    params: AlgParams,
    seed: int,
    initial: ScheduleVars | None = None,
    fixed_a: np.ndarray | None = None,
) -> ScaResult:
    """Iterate convex subproblems from a feasible start until L stalls.

    Returns the iterate trajectory together with per-iteration records of
    the true penalized objective and both penalty values.  Raises
    :class:`ScaError` if a subproblem solve does not reach optimality.
    """
    if fixed_a is not None and initial is None:
        raise ValueError("fixed-assignment runs need an explicit initial bundle")
    vars0 = initial if initial is not None else initial_point(profiles, config, params, seed)
    iterates = [vars0]
    L_prev = penalized_objective(vars0, params)
    records = [
        ScaRecord(0, L_prev, vars0.q, penalty_V1(vars0.r_tilde, vars0.t_tilde, vars0.S_split),
                  penalty_V2(vars0.a), "initial")
    ]
    converged = False
    current = vars0
    for n in range(1, params.max_iters + 1):
        handle = build_subproblem(current, params, profiles, config, fixed_a=fixed_a)
        try:
            sol, status_note = _solve_subproblem(handle.program, params.solver_tol)
        except ScaError as err:
            raise ScaError(f"iteration {n}: {err}") from None
        current = handle.extract(sol)
        L = penalized_objective(current, params)
        records.append(
            ScaRecord(n, L, current.q,
                      penalty_V1(current.r_tilde, current.t_tilde, current.S_split),
                      penalty_V2(current.a), status_note)
        )
        iterates.append(current)
        # relative stop; L >= q >= K T_c keeps the scale well defined
        if abs(L - L_prev) <= params.epsilon * max(abs(L_prev), 1e-6):
            converged = True
            L_prev = L
            break
        L_prev = L
    final = iterates[-1]
    return ScaResult(
        iterates=iterates,
        records=records,
        final=final,
        V1=penalty_V1(final.r_tilde, final.t_tilde, final.S_split),
        V2=penalty_V2(final.a),
        converged=converged,
        penalty_lambda=params.penalty_lambda,
    )


def _repair_assignment(a_frac: np.ndarray, threshold: float) -> np.ndarray:
    """Round and repair an assignment into the exact nested quota structure.

    Session 1 keeps everyone; each later session keeps the quota-many
    largest fractional values among the UEs still active in the previous
    session (ties broken by ascending UE index), so nesting holds by
    construction.
    """
    if not np.all(np.isfinite(a_frac)):
        raise RoundingError("assignment contains non-finite entries")
    K = a_frac.shape[0]
    a = np.zeros((K, K))
    a[:, 0] = 1.0
    prev_active = list(range(K))
    for i in range(1, K):
        quota = K - i
        ranked = sorted(prev_active, key=lambda k: (-a_frac[k, i], k))
        keep = ranked[:quota]
        # threshold only matters as a sanity band: values far below it
        # should not be kept ahead of values far above it, which the
        # value ranking already guarantees
        a[keep, i] = 1.0
        prev_active = keep
    return a


def round_and_polish(
    vars: ScheduleVars,
    profiles: list[UEProfile],
    config: NetworkConfig,
    params: AlgParams,
) -> Schedule:
    """Extract a binary schedule from a near-binary relaxed solution.

    The assignment is rounded and repaired, the continuous variables are
    re-optimized with the assignment frozen, and the final durations are
    reconstructed exactly from the data-balance system so the delivered
    payloads match the rate-time products to validation accuracy.
    """
    v2 = penalty_V2(vars.a)
    if v2 > 0.1:
        raise RoundingError(f"assignment too fractional to round (V2={v2:.3g})")
    a_bin = _repair_assignment(vars.a, params.round_threshold)
    # active pairs need strictly positive power for a feasible start; a
    # vanishing share can be inherited when rounding moved a UE around
    eta = a_bin * (vars.eta + 1e-8)
    eta /= np.maximum(eta.sum(axis=0, keepdims=True), 1.0)
    start = _exact_point(a_bin, eta, profiles, config)
    polish = sca_solve(
        profiles, config, params, seed=0, initial=start, fixed_a=a_bin
    )
    eta_fin = polish.final.eta * a_bin
    final = _exact_point(a_bin, eta_fin, profiles, config)
    # the bundle's powers may have been recalibrated by the projection
    # path; the schedule must carry exactly the powers its payloads used
    completion = (a_bin * final.t[np.newaxis, :]).sum(axis=1)
    schedule = Schedule(
        a=a_bin,
        durations=final.t,
        eta=final.eta,
        payload_bits=final.S_split * MEGABIT,
        completion_s=completion,
        objective_s=float(np.max(completion)),
    )
    report = validate_schedule(schedule, profiles, config)
    if not report.passed:
        raise RoundingError(
            f"polished schedule failed validation: {report.worst_name} "
            f"residual {report.max_residual:.3g}"
        )
    return schedule


@dataclass(frozen=True)
class ResidualReport:
    residuals: dict[str, float]
    tolerance: float = 1e-6

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    @property
    def worst_name(self) -> str:
        return max(self.residuals, key=self.residuals.get)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tolerance


def validate_schedule(
    schedule: Schedule, profiles: list[UEProfile], config: NetworkConfig
) -> ResidualReport:
    """Per-constraint residuals of a concrete schedule (relative where scaled)."""
    K = config.K
    a, t, eta = schedule.a, schedule.durations, schedule.eta
    S = schedule.payload_bits / MEGABIT
    S_k = _data_scaled(profiles)
    R = _session_rates(a, eta, profiles, config)
    res: dict[str, float] = {}
    res["assign_binary"] = float(np.max(np.abs(a * (1.0 - a))))
    res["assign_first_session"] = float(np.max(np.abs(a[:, 0] - 1.0)))
    quota = np.array([K - i for i in range(K)], dtype=float)
    res["assign_quota"] = float(np.max(np.abs(a.sum(axis=0) - quota)))
    res["assign_nesting"] = float(np.max(np.maximum(a[:, 1:] - a[:, :-1], 0.0), initial=0.0))
    res["power_budget"] = float(np.max(np.maximum(eta.sum(axis=0) - 1.0, 0.0)))
    res["power_nonneg"] = float(np.max(np.maximum(-eta, 0.0)))
    res["power_inactive"] = float(np.max(np.abs(eta * (1.0 - a))))
    res["data_total"] = float(np.max(np.abs(S.sum(axis=1) - S_k) / np.maximum(1.0, S_k)))
    rate_time = R * a * t[np.newaxis, :]
    res["data_rate_time"] = float(
        np.max(np.abs(S - rate_time) / np.maximum(1.0, np.abs(rate_time)))
    )
    res["session_min_time"] = float(np.max(np.maximum(config.T_c_small - t, 0.0)))
    res["horizon"] = float(
        max(0.0, (np.sum(t) - config.T_c_large) / max(1.0, config.T_c_large))
    )
    comp = (a * t[np.newaxis, :]).sum(axis=1)
    res["completion_consistency"] = float(
        np.max(np.abs(comp - schedule.completion_s) / np.maximum(1.0, comp))
    )
    return ResidualReport(res)


def fhat_residuals(
    vars: ScheduleVars, profiles: list[UEProfile], config: NetworkConfig
) -> dict[str, float]:
    """Residuals of the relaxed feasible set (everything except penalties).

    All entries are normalized to be comparable against a single absolute
    threshold; rate brackets are checked against the true (non-surrogate)
    rate expressions.
    """
    K = config.K
    a, eta, S, t = vars.a, vars.eta, vars.S_split, vars.t
    S_k = _data_scaled(profiles)
    res: dict[str, float] = {}
    res["assign_first_session"] = float(np.max(np.abs(a[:, 0] - 1.0)))
    quota = np.array([K - i for i in range(K)], dtype=float)
    res["assign_quota"] = float(np.max(np.abs(a.sum(axis=0) - quota)) / K)
    res["assign_nesting"] = float(np.max(np.maximum(a[:, 1:] - a[:, :-1], 0.0), initial=0.0))
    res["assign_box"] = float(np.max(np.maximum(np.maximum(-a, a - 1.0), 0.0)))
    res["power_budget"] = float(np.max(np.maximum(eta.sum(axis=0) - 1.0, 0.0)))
    res["power_nonneg"] = float(np.max(np.maximum(-eta, 0.0)))
    res["power_coupling"] = float(np.max(np.maximum(eta - a, 0.0)))
    res["data_total"] = float(np.max(np.abs(S.sum(axis=1) - S_k) / np.maximum(1.0, S_k)))
    res["data_nonneg"] = float(np.max(np.maximum(-S, 0.0)))
    rates = np.zeros((K, K))
    for i in range(K):
        for k in range(K):
            sinr = session_sinr(np.maximum(eta[:, i], 0.0), k, K - i, profiles, config)
            rates[k, i] = achievable_rate(sinr, config) / MEGABIT
    scale_r = np.maximum(1.0, rates)
    res["rate_lower_bracket"] = float(np.max(np.maximum(vars.r_hat - rates, 0.0) / scale_r))
    res["rate_bracket_nonneg"] = float(np.max(np.maximum(-vars.r_hat, 0.0)))
    res["rate_upper_bracket"] = float(np.max(np.maximum(rates - vars.r_tilde, 0.0) / scale_r))
    at = a * t[np.newaxis, :]
    scale_t = np.maximum(1.0, np.abs(at))
    res["time_lower_bracket"] = float(np.max(np.maximum(vars.t_hat - at, 0.0) / scale_t))
    res["time_upper_bracket"] = float(np.max(np.maximum(at - vars.t_tilde, 0.0) / scale_t))
    prod = vars.r_hat * vars.t_hat
    res["product_lower"] = float(
        np.max(np.maximum(S - prod, 0.0) / np.maximum(1.0, np.abs(prod)))
    )
    res["epigraph"] = float(
        np.max(np.maximum(vars.t_tilde.sum(axis=1) - vars.q, 0.0)) / max(1.0, vars.q)
    )
    res["session_min_time"] = float(np.max(np.maximum(config.T_c_small - t, 0.0)))
    res["horizon"] = float(max(0.0, np.sum(t) - config.T_c_large) / max(1.0, config.T_c_large))
    return res


@dataclass
class SessionSolveResult:
    schedule: Schedule
    sca: ScaResult
    start_seed: int
    attempts: int
    escalated: bool


def _start_seeds(master_seed: int, n_starts: int) -> list[int]:
    ss = np.random.SeedSequence(entropy=int(master_seed) & ((1 << 63) - 1))
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n_starts)]


def solve_session_schedule(
    profiles: list[UEProfile],
    config: NetworkConfig,
    params: AlgParams,
    seed: int,
) -> SessionSolveResult:
    """Full pipeline: multi-start SCA, penalty escalation, round and polish.

    Runs ``params.n_starts`` independent starts, escalates the penalty
    multiplier by 10x (warm-started, up to ``lambda_max_factor``) whenever
    the terminal penalties exceed ``epsilon``, and keeps the best polished
    schedule.  Raises the last error if every start fails.
    """
    best: SessionSolveResult | None = None
    last_err: Exception | None = None
    attempts = 0
    for start_seed in _start_seeds(seed, params.n_starts):
        attempts += 1
        try:
            result = sca_solve(profiles, config, params, start_seed)
            escalated = False
            lam = params.penalty_lambda
            while (result.V1 > params.epsilon or result.V2 > params.epsilon) and (
                lam < params.penalty_lambda * params.lambda_max_factor
            ):
                lam *= 10.0
                escalated = True
                result = sca_solve(
                    profiles,
                    config,
                    replace(params, penalty_lambda=lam),
                    start_seed,
                    initial=result.final,
                )
            schedule = round_and_polish(result.final, profiles, config, params)
        except (ScaError, RoundingError, InfeasibleInstanceError) as err:
            last_err = err
            continue
        candidate = SessionSolveResult(
            schedule=schedule,
            sca=result,
            start_seed=start_seed,
            attempts=attempts,
            escalated=escalated,
        )
        if best is None or candidate.schedule.objective_s < best.schedule.objective_s:
            best = candidate
    if best is None:
        raise last_err if last_err is not None else ScaError("no start succeeded")
    return best
