"""Session-based downlink scheduling for massive MIMO completion times.

Subpackages:

* :mod:`sessionmimo.channel` -- pathloss, estimate statistics, ZF rates.
* :mod:`sessionmimo.surrogates` -- convex bounds for the SCA loops.
* :mod:`sessionmimo.conic` -- cone-program container and solver contract.
* :mod:`sessionmimo.session_opt` -- session assignment / power optimizer.
* :mod:`sessionmimo.baselines` -- the three conventional comparison schemes.
* :mod:`sessionmimo.harness` -- seeded Monte Carlo driver and reports.
"""

from .channel import (
    NetworkConfig,
    UEProfile,
    SmallScaleState,
    SingularChannelError,
    pathloss_beta,
    mmse_variance,
    session_sinr,
    achievable_rate,
    conventional_sinr_rate,
    draw_small_scale,
    zf_precoders,
)

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
]

__version__ = "0.1.0"
