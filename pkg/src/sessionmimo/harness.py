"""Seeded Monte Carlo driver: UE drops, scheme runs, pooled statistics.

Every random quantity derives from the experiment's master seed through
named SeedSequence paths, so results are bit-reproducible and individual
trials can be regenerated in isolation.  Completion times are reported
per (trial, scheme, UE) together with a status: ``ok``, ``censored``
(the per-block heuristic ran out of horizon) or ``failed`` (a scheme
could not produce a schedule for that trial).  Censored and failed
entries never enter the pooled finite-sample statistics.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import conda_solve, connoda_power, smallscale_simulate
from .channel import NetworkConfig, UEProfile, mmse_variance, pathloss_beta
from .session_opt import (
    AlgParams,
    InfeasibleInstanceError,
    RoundingError,
    ScaError,
    Schedule,
    solve_session_schedule,
    validate_schedule,
)

__all__ = [
    "SCHEMES",
    "ExperimentSpec",
    "CompletionRow",
    "CompletionReport",
    "drop_ues",
    "run_experiment",
    "summarize",
    "nearest_rank_percentile",
    "write_completions_csv",
    "write_percentiles_csv",
    "write_trace_csv",
    "SCALE_PRESETS",
]

SCHEMES = ("SB", "ConDA", "ConNoDA", "SmallScale")

# reduced-size preset for quick runs vs. the full published setup
SCALE_PRESETS = {
    "desk": {"M": 8, "K": 4, "trials": 50},
    "paper": {"M": 40, "K": 25, "trials": 200},
}

_STREAM_DROP = 0
_STREAM_SMALLSCALE = 1
_STREAM_SESSION = 2


def _derived_seed(master_seed: int, stream: int, trial: int) -> int:
    ss = np.random.SeedSequence(
        entropy=int(master_seed) & ((1 << 63) - 1), spawn_key=(stream, trial)
    )
    return int(ss.generate_state(1)[0])


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one experiment byte-for-byte."""

    config: NetworkConfig
    trials: int = 50
    schemes: tuple[str, ...] = SCHEMES
    master_seed: int = 1
    first_ue_bits: float = 1e6  # 0.125 MB
    step_bits: float = 4e6  # 0.5 MB
    session_params: AlgParams = field(default_factory=AlgParams)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.first_ue_bits <= 0 or self.step_bits < 0:
            raise ValueError("data-size rule needs positive start and nonnegative step")
        unknown = set(self.schemes) - set(SCHEMES)
        if unknown:
            raise ValueError(f"unknown schemes: {sorted(unknown)}")

    def data_bits(self) -> np.ndarray:
        return self.first_ue_bits + self.step_bits * np.arange(self.config.K)

    def to_json(self) -> str:
        payload = {
            "network": dataclasses.asdict(self.config),
            "data": {"first_ue_bits": self.first_ue_bits, "step_bits": self.step_bits},
            "trials": self.trials,
            "schemes": list(self.schemes),
            "master_seed": self.master_seed,
            "session": dataclasses.asdict(self.session_params),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        payload = json.loads(text)
        return cls(
            config=NetworkConfig(**payload["network"]),
            trials=payload.get("trials", 50),
            schemes=tuple(payload.get("schemes", SCHEMES)),
            master_seed=payload.get("master_seed", 1),
            first_ue_bits=payload.get("data", {}).get("first_ue_bits", 1e6),
            step_bits=payload.get("data", {}).get("step_bits", 4e6),
            session_params=AlgParams(**payload.get("session", {})),
        )


@dataclass(frozen=True)
class CompletionRow:
    trial: int
    scheme: str
    ue: int
    completion_s: float
    status: str  # ok | censored | failed


@dataclass
class CompletionReport:
    spec: ExperimentSpec
    rows: list[CompletionRow]
    schedules: dict[int, Schedule] = field(default_factory=dict)
    failures: dict[tuple[int, str], str] = field(default_factory=dict)

    def samples(self, scheme: str) -> np.ndarray:
        """Pooled finite per-UE completion times for one scheme."""
        vals = [r.completion_s for r in self.rows if r.scheme == scheme and r.status == "ok"]
        return np.sort(np.array(vals))

    def per_trial_max(self, scheme: str) -> np.ndarray:
        """Worst completion per trial (only trials where every UE finished)."""
        by_trial: dict[int, list[float]] = {}
        bad: set[int] = set()
        for r in self.rows:
            if r.scheme != scheme:
                continue
            if r.status != "ok":
                bad.add(r.trial)
            else:
                by_trial.setdefault(r.trial, []).append(r.completion_s)
        vals = [max(v) for t, v in sorted(by_trial.items()) if t not in bad]
        return np.sort(np.array(vals))


def drop_ues(spec: ExperimentSpec, trial_index: int) -> list[UEProfile]:
    """One random UE drop: positions, shadowing, pathloss and data sizes.

    Positions are uniform on the square cell with the BS at the center;
    draws closer than the minimum distance are rejected and redrawn.
    Deterministic per (master_seed, trial_index).
    """
    cfg = spec.config
    rng = np.random.default_rng(_derived_seed(spec.master_seed, _STREAM_DROP, trial_index))
    half = cfg.cell_side_D / 2.0
    min_km = cfg.min_distance / 1000.0
    data = spec.data_bits()
    profiles = []
    for k in range(cfg.K):
        while True:
            x, y = rng.uniform(-half, half, size=2)
            d = float(np.hypot(x, y))
            if d >= min_km:
                break
        shadow = float(rng.normal(0.0, 7.0))
        beta = pathloss_beta(d, shadow, cfg.min_distance)
        sigma2 = mmse_variance(beta, cfg.tau_p, cfg.rho_p)
        profiles.append(
            UEProfile(
                distance_km=d,
                shadow_dB=shadow,
                beta=beta,
                sigma2=sigma2,
                data_bits=float(data[k]),
            )
        )
    return profiles


def _run_scheme(
    scheme: str,
    spec: ExperimentSpec,
    trial: int,
    profiles: list[UEProfile],
) -> tuple[list[CompletionRow], Schedule | None]:
    cfg, K = spec.config, spec.config.K

    def rows_ok(values):
        return [CompletionRow(trial, scheme, k, float(values[k]), "ok") for k in range(K)]

    if scheme == "SB":
        seed = _derived_seed(spec.master_seed, _STREAM_SESSION, trial)
        result = solve_session_schedule(profiles, cfg, spec.session_params, seed)
        return rows_ok(result.schedule.completion_s), result.schedule
    if scheme == "ConDA":
        sol = conda_solve(profiles, cfg)
        return rows_ok(sol.completion_s), None
    if scheme == "ConNoDA":
        _, rate = connoda_power(profiles, cfg)
        data = np.array([p.data_bits for p in profiles])
        return rows_ok(data / rate), None
    if scheme == "SmallScale":
        seed = _derived_seed(spec.master_seed, _STREAM_SMALLSCALE, trial)
        run = smallscale_simulate(profiles, cfg, seed)
        rows = []
        for k in range(K):
            status = "censored" if run.censored[k] else "ok"
            rows.append(CompletionRow(trial, scheme, k, float(run.completion_s[k]), status))
        return rows, None
    raise ValueError(f"unknown scheme {scheme}")


def run_experiment(spec: ExperimentSpec) -> CompletionReport:
    """Run every requested scheme on every trial's drop.

    Per-trial scheme failures are recorded with status ``failed`` (one
    row per UE, NaN completion) and never abort the experiment.
    """
    rows: list[CompletionRow] = []
    schedules: dict[int, Schedule] = {}
    failures: dict[tuple[int, str], str] = {}
    for trial in range(spec.trials):
        profiles = drop_ues(spec, trial)
        for scheme in spec.schemes:
            try:
                scheme_rows, schedule = _run_scheme(scheme, spec, trial, profiles)
            except (ScaError, RoundingError, InfeasibleInstanceError) as err:
                failures[(trial, scheme)] = str(err)
                scheme_rows = [
                    CompletionRow(trial, scheme, k, float("nan"), "failed")
                    for k in range(spec.config.K)
                ]
                schedule = None
            rows.extend(scheme_rows)
            if schedule is not None:
                schedules[trial] = schedule
    return CompletionReport(spec=spec, rows=rows, schedules=schedules, failures=failures)


def nearest_rank_percentile(sorted_samples: np.ndarray, p: float) -> float:
    """Nearest-rank percentile on an ascending sample array."""
    n = len(sorted_samples)
    if n == 0:
        raise ValueError("empty sample set")
    if not (0.0 < p <= 100.0):
        raise ValueError("percentile must lie in (0, 100]")
    rank = int(np.ceil(p / 100.0 * n))
    return float(sorted_samples[max(rank, 1) - 1])


@dataclass
class PercentileTable:
    percentiles: tuple[float, ...]
    pooled: dict[str, dict[float, float]]
    per_trial_max: dict[str, dict[float, float]]
    cdf_samples: dict[str, np.ndarray]


def summarize(
    report: CompletionReport, percentiles: tuple[float, ...] = (10, 25, 50, 75, 90, 95)
) -> PercentileTable:
    """Pooled and per-trial-max percentile tables per scheme."""
    pooled: dict[str, dict[float, float]] = {}
    per_max: dict[str, dict[float, float]] = {}
    cdf: dict[str, np.ndarray] = {}
    for scheme in report.spec.schemes:
        samples = report.samples(scheme)
        maxima = report.per_trial_max(scheme)
        if len(samples) == 0:
            raise ValueError(f"no finite samples for scheme {scheme}")
        cdf[scheme] = samples
        pooled[scheme] = {p: nearest_rank_percentile(samples, p) for p in percentiles}
        per_max[scheme] = {
            p: nearest_rank_percentile(maxima, p) if len(maxima) else float("nan")
            for p in percentiles
        }
    return PercentileTable(
        percentiles=tuple(percentiles), pooled=pooled, per_trial_max=per_max, cdf_samples=cdf
    )


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def write_completions_csv(report: CompletionReport, path: Path | str) -> None:
    lines = ["trial,scheme,ue,completion_s,status"]
    for r in report.rows:
        lines.append(f"{r.trial},{r.scheme},{r.ue},{_fmt(r.completion_s)},{r.status}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_percentiles_csv(table: PercentileTable, path: Path | str) -> None:
    lines = ["scheme,percentile,pooled_s,per_trial_max_s"]
    for scheme, vals in table.pooled.items():
        for p in table.percentiles:
            lines.append(
                f"{scheme},{_fmt(p)},{_fmt(vals[p])},{_fmt(table.per_trial_max[scheme][p])}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def write_trace_csv(records, path: Path | str) -> None:
    lines = ["iter,L,q,V1,V2,status"]
    for rec in records:
        lines.append(
            f"{rec.iteration},{_fmt(rec.L)},{_fmt(rec.q)},{_fmt(rec.V1)},"
            f"{_fmt(rec.V2)},{rec.status}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def save_schedules(report: CompletionReport, path: Path | str) -> None:
    payload = {}
    for trial, sched in report.schedules.items():
        payload[str(trial)] = {
            "a": sched.a.tolist(),
            "durations": sched.durations.tolist(),
            "eta": sched.eta.tolist(),
            "payload_bits": sched.payload_bits.tolist(),
            "completion_s": sched.completion_s.tolist(),
            "objective_s": sched.objective_s,
        }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_schedules(path: Path | str) -> dict[int, Schedule]:
    payload = json.loads(Path(path).read_text())
    out = {}
    for key, entry in payload.items():
        out[int(key)] = Schedule(
            a=np.array(entry["a"]),
            durations=np.array(entry["durations"]),
            eta=np.array(entry["eta"]),
            payload_bits=np.array(entry["payload_bits"]),
            completion_s=np.array(entry["completion_s"]),
            objective_s=float(entry["objective_s"]),
        )
    return out


def validate_saved_run(out_dir: Path | str) -> dict[int, dict[str, float]]:
    """Re-check every saved schedule against freshly regenerated drops."""
    out_dir = Path(out_dir)
    spec = ExperimentSpec.from_json((out_dir / "spec.json").read_text())
    schedules = load_schedules(out_dir / "schedules.json")
    results = {}
    for trial, sched in schedules.items():
        profiles = drop_ues(spec, trial)
        report = validate_schedule(sched, profiles, spec.config)
        results[trial] = dict(report.residuals, passed=float(report.passed))
    return results
