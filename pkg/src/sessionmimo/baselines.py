"""The three conventional comparison schemes.

* ``conda_solve``: data-size-aware single-phase power control minimizing
  the worst completion time via iterated convex programs.
* ``connoda_power``: closed-form power control equalizing all SINRs
  (max-min rate), oblivious to data sizes.
* ``smallscale_simulate``: per-coherence-block greedy scheme that drops
  finished UEs and splits power by inverse instantaneous gain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conic
from .channel import (
    NetworkConfig,
    SingularChannelError,
    UEProfile,
    achievable_rate,
    conventional_sinr_rate,
    draw_small_scale,
    session_sinr,
    zf_precoders,
)
from .conic import ConeProgramBuilder, SolveStatus
from .session_opt import MEGABIT, InfeasibleInstanceError, ScaError
from .surrogates import rate_lower_surrogate

__all__ = [
    "ConventionalVars",
    "HeuristicRun",
    "conda_solve",
    "connoda_power",
    "smallscale_simulate",
]


@dataclass
class ConventionalVars:
    """Converged single-phase solution: powers, rate floors, completion."""

    eta: np.ndarray  # K powers
    rates: np.ndarray  # achieved rates R_k(eta), bits/s
    z: float  # worst completion time (s)
    iterations: int

    @property
    def completion_s(self) -> np.ndarray:
        return self._completions

    _completions: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class HeuristicRun:
    """Trace of the per-coherence-block greedy scheme."""

    block_duration: float
    active_sets: list[list[int]]
    gains: list[np.ndarray]
    powers: list[np.ndarray]
    completion_s: np.ndarray
    censored: np.ndarray  # True where the horizon ran out
    blocks_used: int


def connoda_power(
    profiles: list[UEProfile], config: NetworkConfig
) -> tuple[np.ndarray, float]:
    """Closed-form max-min power control; returns (eta, common rate bits/s).

    Every UE gets the same SINR; the power coefficients sum to one.
    """
    K = config.K
    sigma2 = np.array([p.sigma2 for p in profiles])
    beta = np.array([p.beta for p in profiles])
    if np.any(sigma2 <= 0):
        raise ValueError("closed-form power control needs positive estimate variance")
    rho = config.rho
    denom_sum = float(np.sum(1.0 / (rho * sigma2)) + np.sum((beta - sigma2) / sigma2))
    eta = (1.0 + rho * (beta - sigma2)) / (rho * sigma2 * denom_sum)
    sinr = session_sinr(eta, 0, K, profiles, config)
    rate = achievable_rate(sinr, config)
    return eta, rate


def conda_solve(
    profiles: list[UEProfile],
    config: NetworkConfig,
    tol: float = 1e-8,
    max_iters: int = 200,
) -> ConventionalVars:
    """Minimize the worst completion time with one fixed rate per UE.

    Iterates convex programs built from the concave rate lower bound;
    the epigraph objective is non-increasing across iterations.  Raises
    :class:`InfeasibleInstanceError` when even the optimized completion
    exceeds the large-scale coherence time.
    """
    K = config.K
    S = np.array([p.data_bits for p in profiles]) / MEGABIT
    eta, _ = connoda_power(profiles, config)
    rates = np.array(
        [conventional_sinr_rate(eta, k, profiles, config)[1] for k in range(K)]
    ) / MEGABIT
    z = float(np.max(S / rates))
    iterations = 0
    for n in range(1, max_iters + 1):
        iterations = n
        b = ConeProgramBuilder()
        ie = b.new_vars(K, "eta", lb=0.0, ub=1.0)
        ir = b.new_vars(K, "r", lb=0.0)
        iz = b.new_var("z", lb=0.0)
        V = b.var
        b.add_ineq(sum(V(i) for i in ie), 1.0)
        sum_eta = sum(V(i) for i in ie)
        for k in range(K):
            low = rate_lower_surrogate(eta, k, K, profiles, config)
            c_rate = low.scale / MEGABIT
            ups_expr = V(ie[k]) * low.gain
            u = b.new_var(f"u[{k}]", lb=0.0)
            norm = max(low.upsilon0, 1.0)
            b.add_hyperbolic(ups_expr * (1.0 / norm), V(u), rhs=low.upsilon0 / norm)
            phi_expr = sum_eta * low.interf + 1.0
            b.add_ineq(
                V(ir[k]) + (V(u) * low.inv_coef + phi_expr * low.phi_coef) * c_rate,
                c_rate * low.const,
            )
            # completion bound: S_k <= z * r_k
            b.add_hyperbolic(V(iz), V(ir[k]), rhs=float(S[k]))
        b.minimize(V(iz))
        sol = conic.solve(b.build(), tol=min(tol, 1e-8))
        if sol.status is not SolveStatus.OPTIMAL:
            raise ScaError(f"conventional scheme solve failed at iteration {n}: "
                           f"{sol.status.value}")
        eta = np.clip(np.array([sol.x[i] for i in ie]), 0.0, 1.0)
        rates = np.array(
            [conventional_sinr_rate(eta, k, profiles, config)[1] for k in range(K)]
        ) / MEGABIT
        z_new = float(np.max(S / rates))
        if abs(z - z_new) <= tol * max(1.0, abs(z)):
            z = min(z, z_new)
            break
        z = min(z, z_new)
    if z > config.T_c_large * (1.0 + 1e-9):
        raise InfeasibleInstanceError(
            f"conventional completion {z:.3f}s exceeds the coherence horizon"
        )
    out = ConventionalVars(eta=eta, rates=rates * MEGABIT, z=z, iterations=iterations)
    out._completions = S / rates
    return out


def smallscale_simulate(
    profiles: list[UEProfile],
    config: NetworkConfig,
    seed: int,
    max_resamples: int = 100,
) -> HeuristicRun:
    """Greedy per-block scheduling with inverse-gain max-min power.

    Each coherence block draws fresh channels for the still-active UEs,
    computes unit-coefficient ZF gains c_k, splits power so all products
    c_k eta_k are equal, and drains queues at the resulting rates.  A UE
    finishing inside a block is timestamped fractionally and excluded
    from the next block.  UEs still active when the horizon ends are
    censored.
    """
    K = config.K
    rng = np.random.default_rng(seed)
    queues = np.array([float(p.data_bits) for p in profiles])
    completion = np.full(K, np.nan)
    censored = np.zeros(K, dtype=bool)
    T_c, horizon = config.T_c_small, config.T_c_large
    active_sets: list[list[int]] = []
    gains_log: list[np.ndarray] = []
    powers_log: list[np.ndarray] = []
    elapsed = 0.0
    blocks = 0
    while True:
        active = [k for k in range(K) if queues[k] > 0.0]
        if not active:
            break
        if elapsed + T_c > horizon + 1e-12:
            for k in active:
                completion[k] = horizon
                censored[k] = True
            break
        for attempt in range(max_resamples):
            state = draw_small_scale(rng, active, profiles, config)
            try:
                _, gains = zf_precoders(state, np.ones(len(active)), config)
                break
            except SingularChannelError:
                continue
        else:
            raise SingularChannelError("could not draw a full-rank block")
        inv = 1.0 / gains
        eta = inv / float(np.sum(inv))
        snr = gains * eta  # equal across active UEs by construction
        rates = config.prelog * config.B * np.log2(1.0 + snr)
        active_sets.append(list(active))
        gains_log.append(gains)
        powers_log.append(eta)
        for j, k in enumerate(active):
            sent = rates[j] * T_c
            if sent >= queues[k]:
                t_done = elapsed + queues[k] / rates[j]
                if t_done <= horizon:
                    completion[k] = t_done
                else:
                    completion[k] = horizon
                    censored[k] = True
                queues[k] = 0.0
            else:
                queues[k] -= sent
        elapsed += T_c
        blocks += 1
    return HeuristicRun(
        block_duration=T_c,
        active_sets=active_sets,
        gains=gains_log,
        powers=powers_log,
        completion_s=completion,
        censored=censored,
        blocks_used=blocks,
    )
