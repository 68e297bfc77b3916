"""Physical-layer model: pathloss, channel-estimate statistics, ZF rates.

All quantities are kept in linear scale and SI-ish units: rates in bits/s,
data in bits, time in seconds, powers normalized by the noise power.
Every randomized routine takes an explicit seed (or Generator) and is a
pure function of (seed, inputs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NetworkConfig",
    "UEProfile",
    "SmallScaleState",
    "SingularChannelError",
    "pathloss_beta",
    "mmse_variance",
    "session_sinr",
    "achievable_rate",
    "conventional_sinr_rate",
    "draw_small_scale",
    "zf_precoders",
    "noise_power_watts",
]


class SingularChannelError(RuntimeError):
    """Estimated channel matrix is rank deficient; caller should resample."""


def noise_power_watts(noise_dBm: float) -> float:
    """Noise power in watts from its dBm value."""
    return 10.0 ** ((noise_dBm - 30.0) / 10.0)


@dataclass(frozen=True)
class NetworkConfig:
    """Cell-level constants shared by every scheme.

    ``rho`` and ``rho_p`` are transmit powers already normalized by the
    noise power (dimensionless, linear).  Use :meth:`from_powers_watts`
    to build a config from raw wattages.
    """

    M: int  # BS antennas
    K: int  # UEs
    tau_c: int = 200  # small-scale coherence block length (samples)
    tau_p: int | None = None  # pilot length; defaults to K (orthogonal pilots)
    B: float = 100e6  # bandwidth (Hz)
    rho: float = 1.0  # normalized BS transmit power
    rho_p: float = 0.1  # normalized pilot power
    T_c_small: float = 1e-3  # small-scale coherence time (s)
    T_c_large: float = 10.0  # large-scale coherence time (s)
    noise_dBm: float = -92.0
    cell_side_D: float = 0.25  # square cell side (km)
    min_distance: float = 35.0  # minimum BS-UE distance (m)
    use_conjugate_gain: bool = True  # effective gain g^H u (False: g^T u)

    def __post_init__(self):
        if self.tau_p is None:
            object.__setattr__(self, "tau_p", self.K)
        if self.K > self.M:
            raise ValueError(f"K={self.K} exceeds antenna count M={self.M}")
        if self.tau_p < self.K:
            raise ValueError("orthogonal pilots require tau_p >= K")
        if self.tau_p >= self.tau_c:
            raise ValueError("pilot length must leave room for payload (tau_p < tau_c)")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.rho_p < 0:
            raise ValueError("rho_p must be nonnegative")
        if self.T_c_small <= 0:
            raise ValueError("T_c_small must be positive")
        if self.T_c_large < self.K * self.T_c_small:
            raise ValueError(
                "T_c_large must cover K small-scale coherence times, "
                f"got {self.T_c_large} < {self.K} * {self.T_c_small}"
            )

    @classmethod
    def from_powers_watts(
        cls, M: int, K: int, bs_power_W: float = 1.0, pilot_power_W: float = 0.1, **kw
    ) -> "NetworkConfig":
        """Build a config with rho, rho_p normalized by the noise power."""
        noise_dBm = kw.pop("noise_dBm", -92.0)
        sigma0 = noise_power_watts(noise_dBm)
        return cls(
            M=M,
            K=K,
            rho=bs_power_W / sigma0,
            rho_p=pilot_power_W / sigma0,
            noise_dBm=noise_dBm,
            **kw,
        )

    @property
    def prelog(self) -> float:
        """Fraction of each coherence block carrying payload."""
        return (self.tau_c - self.tau_p) / self.tau_c


@dataclass(frozen=True)
class UEProfile:
    """Per-UE large-scale state, fixed for one drop."""

    distance_km: float
    shadow_dB: float
    beta: float  # large-scale fading coefficient (linear)
    sigma2: float  # channel-estimate variance (linear)
    data_bits: float  # payload still owed to this UE

    def __post_init__(self):
        if self.data_bits <= 0:
            raise ValueError("data_bits must be positive")
        if not (0.0 <= self.sigma2 <= self.beta):
            raise ValueError("estimate variance must lie in [0, beta]")


@dataclass
class SmallScaleState:
    """One coherence block worth of channels, estimates and precoders.

    ``channels`` / ``estimates`` are M x K_active complex matrices; the
    estimation error (channels - estimates) is independent of the
    estimates by the MMSE decomposition used to draw them.
    """

    active: list[int]  # UE indices, defines column order
    channels: np.ndarray  # G
    estimates: np.ndarray  # G_hat
    sigma2: np.ndarray  # per-column estimate variance
    beta: np.ndarray  # per-column large-scale coefficient
    precoders: np.ndarray | None = None  # U, columns scaled by sqrt(eta)
    effective_gains: np.ndarray | None = None  # c_k (unit power coefficient)
    queues: np.ndarray = field(default_factory=lambda: np.zeros(0))


def pathloss_beta(distance_km: float, shadow_dB: float, min_distance_m: float = 35.0) -> float:
    """Large-scale fading coefficient from the urban pathloss model.

    beta[dB] = -148.1 - 37.6 log10(d / 1 km) + shadow.
    """
    if distance_km * 1000.0 < min_distance_m - 1e-9:
        raise ValueError(
            f"distance {distance_km * 1000.0:.1f} m below minimum {min_distance_m} m"
        )
    beta_dB = -148.1 - 37.6 * np.log10(distance_km) + shadow_dB
    return float(10.0 ** (beta_dB / 10.0))


def mmse_variance(beta: float, tau_p: int, rho_p: float) -> float:
    """Variance of the MMSE channel estimate for one antenna element.

    sigma^2 = tau_p rho_p beta^2 / (tau_p rho_p beta + 1); the estimation
    error variance is beta - sigma^2.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if tau_p < 1:
        raise ValueError("tau_p must be at least 1")
    if rho_p < 0:
        raise ValueError("rho_p must be nonnegative")
    snr = tau_p * rho_p * beta
    return float(beta * snr / (snr + 1.0))


def session_sinr(
    eta_session: np.ndarray,
    k: int,
    K_i: int,
    profiles: list[UEProfile],
    config: NetworkConfig,
) -> float:
    """Effective downlink SINR of UE k inside one session.

    eta_session holds the power coefficients of all K UEs for this session
    (zeros for UEs that do not participate); K_i is the number of active
    UEs, which sets the ZF array gain M - K_i.
    """
    eta_session = np.asarray(eta_session, dtype=float)
    if K_i < 1 or K_i > config.M:
        raise ValueError(f"active count {K_i} outside [1, M={config.M}]")
    if np.any(eta_session < -1e-15):
        raise ValueError("negative power coefficient")
    p = profiles[k]
    num = (config.M - K_i) * config.rho * p.sigma2 * eta_session[k]
    den = config.rho * (p.beta - p.sigma2) * float(np.sum(eta_session)) + 1.0
    return float(num / den)


def achievable_rate(sinr: float, config: NetworkConfig) -> float:
    """Payload rate in bits/s for a given effective SINR."""
    if sinr < 0:
        raise ValueError("sinr must be nonnegative")
    return float(config.prelog * config.B * np.log2(1.0 + sinr))


def conventional_sinr_rate(
    eta: np.ndarray, k: int, profiles: list[UEProfile], config: NetworkConfig
) -> tuple[float, float]:
    """SINR and rate when all K UEs share a single transmission phase."""
    sinr = session_sinr(eta, k, config.K, profiles, config)
    return sinr, achievable_rate(sinr, config)


def draw_small_scale(
    seed: int | np.random.Generator,
    active_set: list[int],
    profiles: list[UEProfile],
    config: NetworkConfig,
) -> SmallScaleState:
    """Draw one coherence block of channels and MMSE estimates.

    Estimates and estimation errors are drawn independently (CN(0, sigma2)
    and CN(0, beta - sigma2) per entry) and summed, which reproduces the
    joint MMSE statistics.
    """
    if not active_set:
        raise ValueError("active_set must be nonempty")
    if len(active_set) > config.M:
        raise ValueError("more active UEs than antennas")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    M, Ka = config.M, len(active_set)
    sigma2 = np.array([profiles[k].sigma2 for k in active_set])
    beta = np.array([profiles[k].beta for k in active_set])
    err_var = beta - sigma2

    def cgauss(var):
        re = rng.standard_normal((M, Ka))
        im = rng.standard_normal((M, Ka))
        return (re + 1j * im) * np.sqrt(var / 2.0)

    estimates = cgauss(sigma2)
    errors = cgauss(err_var)
    return SmallScaleState(
        active=list(active_set),
        channels=estimates + errors,
        estimates=estimates,
        sigma2=sigma2,
        beta=beta,
    )


def zf_precoders(
    state: SmallScaleState, eta: np.ndarray, config: NetworkConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Zero-forcing precoders and per-UE effective gains for one block.

    Column k of the returned precoder matrix is
    sqrt(eta_k sigma_k^2 (M - K_a)) * Ghat (Ghat^H Ghat)^-1 e_k, so that
    Ghat^H u_k vanishes off position k.  The gains c_k = rho |g_k^H u_k|^2
    are reported for the unit power coefficient (eta_k = 1), which is what
    the per-block max-min power rule consumes.
    """
    Ghat = state.estimates
    M, Ka = Ghat.shape
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (Ka,):
        raise ValueError(f"eta must have length {Ka}")
    if np.any(eta < 0):
        raise ValueError("negative power coefficient")
    gram = Ghat.conj().T @ Ghat
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularChannelError(f"estimate Gram matrix condition {cond:.3g}")
    pinv_cols = Ghat @ np.linalg.inv(gram)  # Ghat (Ghat^H Ghat)^-1
    unit_scale = np.sqrt(state.sigma2 * (M - Ka))
    unit_precoders = pinv_cols * unit_scale
    if config.use_conjugate_gain:
        inner = np.einsum("mk,mk->k", state.channels.conj(), unit_precoders)
    else:
        inner = np.einsum("mk,mk->k", state.channels, unit_precoders)
    gains = config.rho * np.abs(inner) ** 2
    precoders = unit_precoders * np.sqrt(eta)
    state.precoders = precoders
    state.effective_gains = gains
    return precoders, gains
