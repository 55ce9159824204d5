"""Monte Carlo experiment runner: power sweeps, metric aggregation, outputs.

One trial draws a channel, simulates training at both receivers, runs the
two-stage estimator, designs the link and scores MSE/SE against the ground
truth. Trials are embarrassingly parallel with per-trial seed streams that
depend only on (experiment seed, trial index), so the same channel and
noise realizations are shared across power levels and setups; comparisons
along those axes are paired.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .anm import SolverConfig
from .channel import (
    ArrayGeometry,
    Geometry2D,
    PathLossModel,
    sample_channel,
)
from .errors import ConfigError
from .pipeline import (
    DEFAULT_REG_SCALE,
    LinkDesign,
    design_beamformers,
    design_link,
    estimate_stage1,
    estimate_stage2,
    spectral_efficiency,
)
from .recovery import (
    FrequencyEstimate,
    angle_differences,
    freq_from_angle,
    gain_products,
    pair_and_order,
)
from .signals import (
    NoiseModel,
    make_training_config,
    receive_at_bs,
    receive_at_ris,
    training_overhead,
)

__all__ = [
    "ExperimentConfig",
    "TrialMetrics",
    "GroupAggregate",
    "AggregateReport",
    "dbm_to_watts",
    "run_trial",
    "run_experiment",
    "config_from_json",
    "config_to_json",
]

METRIC_FIELDS = (
    "se_est",
    "se_perfect",
    "mse_theta_mr",
    "mse_phi_mr",
    "mse_theta_rb",
    "mse_phi_rb",
    "mse_delta",
    "mse_rho_prod",
    "msf_theta_mr",
    "msf_phi_mr",
    "msf_theta_rb",
    "msf_phi_rb",
)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved parameters of one experiment."""

    setups: tuple[int, ...] = (1, 2, 3)
    n_bs: int = 16
    n_ris: int = 32
    n_ms: int = 16
    n_paths_mr: int = 2
    n_paths_rb: int = 2
    d_t: float = 25.0
    d_x: float = 10.0
    d_y: float = 2.0
    p_t_sweep_dbm: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    n_trials: int = 1000
    seed: int = 0
    output_dir: str = "results"
    fc: float = 28e9
    noise_density_dbm_per_hz: float = -173.0
    bandwidth_hz: float = 1e8
    reg_scale: float = DEFAULT_REG_SCALE
    pilot_kind: str = "random"
    active_placement: str = "uniform"
    max_iters: int = 600
    n_jobs: int = 0

    def __post_init__(self):
        if not self.p_t_sweep_dbm:
            raise ConfigError("transmit-power sweep must be nonempty")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be at least 1")
        if not self.setups:
            raise ConfigError("at least one setup is required")
        for s in self.setups:
            if s not in (1, 2, 3):
                raise ConfigError(f"unknown setup {s}")

    @property
    def geometry(self) -> Geometry2D:
        return Geometry2D.from_distances(self.d_t, self.d_x, self.d_y)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.noise_density_dbm_per_hz, self.bandwidth_hz)

    @property
    def path_loss_model(self) -> PathLossModel:
        return PathLossModel(fc=self.fc)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(max_iters=self.max_iters, abs_tol=1e-8, rel_tol=1e-6)


@dataclass(frozen=True)
class TrialMetrics:
    """Per-trial scores; MSE in squared radians, SE in bits/s/Hz.

    ``msf_*`` are the same angle errors measured on the sines (spatial
    frequencies). Failed trials carry NaN metrics and ``converged=False``.
    """

    se_est: float
    se_perfect: float
    mse_theta_mr: float
    mse_phi_mr: float
    mse_theta_rb: float
    mse_phi_rb: float
    mse_delta: float
    mse_rho_prod: float
    msf_theta_mr: float
    msf_phi_mr: float
    msf_theta_rb: float
    msf_phi_rb: float
    converged: bool
    stage1_solver_converged: bool = True
    stage2_solver_converged: bool = True
    n_ill_conditioned: int = 0

    def __post_init__(self):
        if self.converged:
            for name in METRIC_FIELDS:
                value = getattr(self, name)
                if name.startswith("mse") or name.startswith("msf"):
                    if not value >= 0.0:
                        raise ValueError(f"{name} must be nonnegative, got {value}")


def _paired_mse(est_angles: np.ndarray, true_angles: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Permutation (via frequency matching), radian MSE and sine MSE."""
    n = len(true_angles)
    est = FrequencyEstimate(freq_from_angle(est_angles), n_sources=n)
    ref = FrequencyEstimate(freq_from_angle(true_angles), n_sources=n)
    perm = pair_and_order(est, ref)
    rad = float(np.mean((est_angles[perm] - true_angles) ** 2))
    sine = float(np.mean((np.sin(est_angles[perm]) - np.sin(true_angles)) ** 2))
    return perm, rad, sine


def run_trial(cfg: ExperimentConfig, setup: int, p_t_dbm: float, trial_index: int) -> TrialMetrics:
    """Synthesize, train, estimate, design and score one trial."""
    ss = np.random.SeedSequence([int(cfg.seed), int(trial_index)])
    channel_rng, schedule_rng, noise_rng = [np.random.default_rng(s) for s in ss.spawn(3)]

    bs = ArrayGeometry(cfg.n_bs)
    ris = ArrayGeometry(cfg.n_ris)
    ms = ArrayGeometry(cfg.n_ms)
    real = sample_channel(channel_rng, bs, ris, ms, cfg.n_paths_mr, cfg.n_paths_rb)

    p_t = dbm_to_watts(p_t_dbm)
    train = make_training_config(
        setup,
        schedule_rng,
        n_bs=cfg.n_bs,
        n_ris=cfg.n_ris,
        n_ms=cfg.n_ms,
        pilot_power=p_t,
        pilot_kind=cfg.pilot_kind,
        active_placement=cfg.active_placement,
    )
    geo = cfg.geometry
    plm = cfg.path_loss_model
    beta1 = plm.amplitude(geo.d1)
    beta2 = plm.amplitude(geo.d1, geo.d2)
    sigma2 = cfg.noise.sigma2
    solver = cfg.solver_config()

    obs_ris = receive_at_ris(real, train, beta1, sigma2, noise_rng)
    obs_bs = receive_at_bs(real, train, beta2, sigma2, noise_rng)

    stage1 = estimate_stage1(obs_ris, train, sigma2, beta1, cfg.n_paths_mr, cfg.reg_scale, solver)
    stage2 = estimate_stage2(obs_bs, stage1, train, sigma2, beta2, cfg.n_paths_rb, cfg.reg_scale, solver)

    if stage1.degenerate or stage2.degenerate:
        nan = float("nan")
        return TrialMetrics(
            *(nan,) * len(METRIC_FIELDS),
            converged=False,
            stage1_solver_converged=bool(stage1.anm and stage1.anm.diagnostics.converged),
            stage2_solver_converged=bool(stage2.anm and stage2.anm.diagnostics.converged),
        )

    link = design_link(stage2.cascaded, stage2.h_hat_rb, stage1.h_hat_mr)
    w, f, _ = design_beamformers(real.h_rb, link.omega_data, real.h_mr)
    perfect = LinkDesign(omega_data=link.omega_data, f_ms=f, w_bs=w)
    se_est = spectral_efficiency(real.h_rb, real.h_mr, link, p_t, sigma2, beta2)
    se_perfect = spectral_efficiency(real.h_rb, real.h_mr, perfect, p_t, sigma2, beta2)

    perm_mr, mse_theta_mr, msf_theta_mr = _paired_mse(stage1.params_hat_mr.aod, real.params_mr.aod)
    _, mse_phi_mr, msf_phi_mr = _paired_mse(
        stage1.params_hat_mr.aoa[perm_mr], real.params_mr.aoa
    )
    perm_rb, mse_theta_rb, msf_theta_rb = _paired_mse(stage2.params_hat_rb.aod, real.params_rb.aod)
    _, mse_phi_rb, msf_phi_rb = _paired_mse(stage2.params_hat_rb.aoa[perm_rb], real.params_rb.aoa)

    delta_true = angle_differences(real.params_mr.aoa, real.params_rb.aod)
    delta_est = angle_differences(
        stage1.params_hat_mr.aoa[perm_mr], stage2.params_hat_rb.aod[perm_rb]
    )
    rho_true = gain_products(real.params_rb.gains, real.params_mr.gains)
    rho_est = gain_products(
        stage2.params_hat_rb.gains[perm_rb], stage1.params_hat_mr.gains[perm_mr]
    )
    mse_delta = float(np.mean((delta_est - delta_true) ** 2))
    mse_rho_prod = float(np.mean(np.abs(rho_est - rho_true) ** 2))

    return TrialMetrics(
        se_est=se_est,
        se_perfect=se_perfect,
        mse_theta_mr=mse_theta_mr,
        mse_phi_mr=mse_phi_mr,
        mse_theta_rb=mse_theta_rb,
        mse_phi_rb=mse_phi_rb,
        mse_delta=mse_delta,
        mse_rho_prod=mse_rho_prod,
        msf_theta_mr=msf_theta_mr,
        msf_phi_mr=msf_phi_mr,
        msf_theta_rb=msf_theta_rb,
        msf_phi_rb=msf_phi_rb,
        converged=True,
        stage1_solver_converged=stage1.anm.diagnostics.converged,
        stage2_solver_converged=stage2.anm.diagnostics.converged,
        n_ill_conditioned=int(stage1.ill_conditioned) + int(stage2.ill_conditioned),
    )


@dataclass
class GroupAggregate:
    """Streaming mean/variance per metric for one (setup, power) cell.

    Uses Welford accumulation; disjoint partitions merge exactly, so the
    ordered reduction is independent of how trials were distributed.
    """

    setup: int
    p_t_dbm: float
    count: int = 0
    n_failed: int = 0
    mean: dict = field(default_factory=lambda: {k: 0.0 for k in METRIC_FIELDS})
    m2: dict = field(default_factory=lambda: {k: 0.0 for k in METRIC_FIELDS})

    def add(self, metrics: TrialMetrics) -> None:
        if not metrics.converged:
            self.n_failed += 1
            return
        self.count += 1
        for key in METRIC_FIELDS:
            value = getattr(metrics, key)
            delta = value - self.mean[key]
            self.mean[key] += delta / self.count
            self.m2[key] += delta * (value - self.mean[key])

    def merge(self, other: "GroupAggregate") -> None:
        if (other.setup, other.p_t_dbm) != (self.setup, self.p_t_dbm):
            raise ValueError("cannot merge aggregates of different cells")
        self.n_failed += other.n_failed
        if other.count == 0:
            return
        if self.count == 0:
            self.count = other.count
            self.mean = dict(other.mean)
            self.m2 = dict(other.m2)
            return
        total = self.count + other.count
        for key in METRIC_FIELDS:
            delta = other.mean[key] - self.mean[key]
            self.mean[key] += delta * other.count / total
            self.m2[key] += other.m2[key] + delta**2 * self.count * other.count / total
        self.count = total

    def stderr(self, key: str) -> float:
        if self.count < 2:
            return float("nan")
        return math.sqrt(self.m2[key] / (self.count - 1) / self.count)


@dataclass
class AggregateReport:
    config: ExperimentConfig
    groups: dict            # (setup, p_t_dbm) -> GroupAggregate
    trials: dict            # (setup, p_t_dbm) -> list[TrialMetrics]
    overheads: dict         # setup -> training overhead
    wall_seconds: float

    def group(self, setup: int, p_t_dbm: float) -> GroupAggregate:
        return self.groups[(setup, float(p_t_dbm))]

    def metric_per_trial(self, setup: int, p_t_dbm: float, key: str) -> np.ndarray:
        rows = self.trials[(setup, float(p_t_dbm))]
        return np.array([getattr(t, key) for t in rows if t.converged])


def _trial_task(args):
    cfg_dict, setup, p_t_dbm, trial_index = args
    cfg = ExperimentConfig(**cfg_dict)
    return setup, p_t_dbm, trial_index, run_trial(cfg, setup, p_t_dbm, trial_index)


def run_experiment(cfg: ExperimentConfig, emit: bool = True, keep_trials: bool = True) -> AggregateReport:
    """Sweep (setup x transmit power), aggregate and optionally emit files.

    The reduction is ordered by (setup, power, trial index), so results are
    byte-stable regardless of worker count.
    """
    from .report import emit_outputs, preflight_output_dir

    if emit:
        preflight_output_dir(cfg.output_dir)

    tasks = [
        (setup, float(p_t), idx)
        for setup in cfg.setups
        for p_t in cfg.p_t_sweep_dbm
        for idx in range(cfg.n_trials)
    ]
    n_jobs = cfg.n_jobs if cfg.n_jobs > 0 else (os.cpu_count() or 1)
    t0 = time.perf_counter()
    results: dict = {}
    if n_jobs == 1 or len(tasks) < 4:
        for setup, p_t, idx in tasks:
            results[(setup, p_t, idx)] = run_trial(cfg, setup, p_t, idx)
    else:
        cfg_dict = asdict(cfg)
        payload = [(cfg_dict, s, p, i) for (s, p, i) in tasks]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for setup, p_t, idx, metrics in pool.map(_trial_task, payload, chunksize=8):
                results[(setup, p_t, idx)] = metrics
    wall = time.perf_counter() - t0

    groups: dict = {}
    trials: dict = {}
    for setup, p_t, idx in tasks:  # fixed order: deterministic reduction
        key = (setup, p_t)
        groups.setdefault(key, GroupAggregate(setup=setup, p_t_dbm=p_t))
        trials.setdefault(key, [])
        groups[key].add(results[(setup, p_t, idx)])
        trials[key].append(results[(setup, p_t, idx)])

    overheads = {}
    for setup in cfg.setups:
        rng = np.random.default_rng(0)
        train = make_training_config(
            setup, rng, n_bs=cfg.n_bs, n_ris=cfg.n_ris, n_ms=cfg.n_ms, pilot_power=1.0
        )
        overheads[setup] = training_overhead(train)

    report = AggregateReport(
        config=cfg,
        groups=groups,
        trials=trials if keep_trials else {},
        overheads=overheads,
        wall_seconds=wall,
    )
    if emit:
        emit_outputs(report)
    return report


_CONFIG_LIST_FIELDS = {"setups": int, "p_t_sweep_dbm": float}


def config_to_json(cfg: ExperimentConfig) -> str:
    doc = asdict(cfg)
    for key in _CONFIG_LIST_FIELDS:
        doc[key] = list(doc[key])
    return json.dumps(doc, indent=2, sort_keys=True)


def config_from_json(text: str) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if "setup" in doc:
        raise ConfigError('use "setups": [..] rather than "setup"')
    for key, cast in _CONFIG_LIST_FIELDS.items():
        if key in doc:
            doc[key] = tuple(cast(v) for v in doc[key])
    try:
        return ExperimentConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
