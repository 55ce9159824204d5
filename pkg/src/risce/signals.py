"""Uplink training schedules and noisy received-signal synthesis.

The mobile sends a fixed pilot matrix over ``K`` blocks. A few surface
elements (the active set) listen; the remaining elements reflect with a
per-block random phase pattern towards the base station, which combines
with a fixed matrix. Both observation paths are synthesised here, plus the
fully passive reference model and the training-overhead accounting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization
from .errors import ConfigError

__all__ = [
    "TABLE_SETUPS",
    "TrainingConfig",
    "RisObservation",
    "BsObservation",
    "NoiseModel",
    "make_training_config",
    "selection_matrix",
    "receive_at_ris",
    "receive_at_bs",
    "receive_passive",
    "training_overhead",
    "training_config_to_json",
    "training_config_from_json",
]

# Hybrid-surface parameter rows: active elements M, surface RF chains,
# block count K, training beams T, base-station combiner width and RF chains.
TABLE_SETUPS = {
    1: dict(m=8, n_rf_ris=8, k=5, t=8, n_cb=8, n_rf_bs=8),
    2: dict(m=4, n_rf_ris=4, k=5, t=8, n_cb=8, n_rf_bs=8),
    3: dict(m=2, n_rf_ris=2, k=5, t=8, n_cb=8, n_rf_bs=8),
}


def complex_normal(rng: np.random.Generator, shape, sigma2: float = 1.0) -> np.ndarray:
    """Circular complex Gaussian draws with per-entry variance ``sigma2``."""
    scale = math.sqrt(sigma2 / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class NoiseModel:
    """Thermal noise power from a density (dBm/Hz) and bandwidth (Hz)."""

    density_dbm_per_hz: float = -173.0
    bandwidth_hz: float = 1e8

    @property
    def sigma2(self) -> float:
        """Noise power in watts."""
        dbm = self.density_dbm_per_hz + 10.0 * math.log10(self.bandwidth_hz)
        return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class TrainingConfig:
    """Pilot, combiner and surface phase schedule for one training run.

    ``pilot`` is ``n_ms x t`` with squared column norms equal to
    ``pilot_power``; ``bs_combiner`` is ``n_bs x n_cb`` with unit-norm
    columns. ``phase_schedule`` holds the diagonal of each per-block phase
    matrix as rows of a ``k x n_ris`` array: zero on active elements,
    unit modulus elsewhere. ``active_schedule``, when given, lists a
    per-block active set (``k x m``); otherwise ``active_set`` applies to
    every block.
    """

    n_blocks: int
    n_beams: int
    pilot: np.ndarray
    bs_combiner: np.ndarray
    active_set: np.ndarray
    phase_schedule: np.ndarray
    pilot_power: float
    n_rf_ris: int
    n_rf_bs: int
    active_schedule: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "pilot", np.asarray(self.pilot, dtype=complex))
        object.__setattr__(self, "bs_combiner", np.asarray(self.bs_combiner, dtype=complex))
        object.__setattr__(self, "active_set", np.asarray(self.active_set, dtype=int))
        object.__setattr__(self, "phase_schedule", np.asarray(self.phase_schedule, dtype=complex))
        if self.active_schedule is not None:
            object.__setattr__(self, "active_schedule", np.asarray(self.active_schedule, dtype=int))
        if self.pilot.shape[1] != self.n_beams:
            raise ConfigError("pilot must have n_beams columns")
        if self.phase_schedule.shape != (self.n_blocks, self.n_ris):
            raise ConfigError("phase_schedule must be (n_blocks, n_ris)")
        col_power = np.sum(np.abs(self.pilot) ** 2, axis=0)
        if self.pilot_power > 0 and not np.allclose(col_power, self.pilot_power, rtol=1e-9):
            raise ConfigError("pilot columns must carry pilot_power each")
        comb_norm = np.linalg.norm(self.bs_combiner, axis=0)
        if not np.allclose(comb_norm, 1.0, atol=1e-9):
            raise ConfigError("combiner columns must have unit norm")
        for k in range(self.n_blocks):
            active = self.active_for_block(k)
            if len(np.unique(active)) != self.m:
                raise ConfigError("active set must contain m distinct indices")
            diag = self.phase_schedule[k]
            if np.abs(diag[active]).max(initial=0.0) > 0.0:
                raise ConfigError("phase schedule must vanish on active elements")
            passive = np.setdiff1d(np.arange(self.n_ris), active)
            if passive.size and not np.allclose(np.abs(diag[passive]), 1.0, atol=1e-9):
                raise ConfigError("passive phases must have unit modulus")

    @property
    def n_ms(self) -> int:
        return self.pilot.shape[0]

    @property
    def n_bs(self) -> int:
        return self.bs_combiner.shape[0]

    @property
    def n_cb(self) -> int:
        return self.bs_combiner.shape[1]

    @property
    def n_ris(self) -> int:
        return self.phase_schedule.shape[1] if self.phase_schedule.ndim == 2 else 0

    @property
    def m(self) -> int:
        return self.active_set.size

    def active_for_block(self, k: int) -> np.ndarray:
        if self.active_schedule is not None:
            return self.active_schedule[k]
        return self.active_set

    def phase_matrix(self, k: int) -> np.ndarray:
        """Full diagonal phase matrix of block ``k``."""
        return np.diag(self.phase_schedule[k])


def _unitary_dft(n: int) -> np.ndarray:
    return np.fft.fft(np.eye(n)) / math.sqrt(n)


def make_training_config(
    setup: int | None,
    rng: np.random.Generator,
    *,
    n_bs: int = 16,
    n_ris: int = 32,
    n_ms: int = 16,
    pilot_power: float = 0.01,
    pilot_kind: str = "dft",
    active_placement: str = "uniform",
    vary_active_per_block: bool = False,
    m: int | None = None,
    n_rf_ris: int | None = None,
    k: int | None = None,
    t: int | None = None,
    n_cb: int | None = None,
    n_rf_bs: int | None = None,
) -> TrainingConfig:
    """Build a training schedule from a table row or explicit fields.

    ``setup`` selects a row of :data:`TABLE_SETUPS`; any explicit keyword
    overrides the row (pass ``setup=None`` to specify everything). The pilot
    is the first ``t`` columns of the ``n_ms``-point unitary DFT scaled to
    ``pilot_power`` per column (or random unit-modulus entries with
    ``pilot_kind="random"``), the combiner the first ``n_cb`` columns of the
    ``n_bs``-point unitary DFT. Surface phases are i.i.d. uniform on
    [0, 2*pi) per block and zeroed on the active set.
    """
    fields = dict(TABLE_SETUPS.get(setup, {})) if setup is not None else {}
    if setup is not None and setup not in TABLE_SETUPS:
        raise ConfigError(f"unknown setup {setup}; choose one of {sorted(TABLE_SETUPS)}")
    overrides = dict(m=m, n_rf_ris=n_rf_ris, k=k, t=t, n_cb=n_cb, n_rf_bs=n_rf_bs)
    for key, value in overrides.items():
        if value is not None:
            fields[key] = value
    missing = [key for key in ("m", "n_rf_ris", "k", "t", "n_cb", "n_rf_bs") if key not in fields]
    if missing:
        raise ConfigError(f"missing training fields: {missing}")
    m_, k_, t_, n_cb_ = fields["m"], fields["k"], fields["t"], fields["n_cb"]

    if m_ > n_ris:
        raise ConfigError(f"active set size {m_} exceeds n_ris={n_ris}")
    if t_ > n_ms:
        raise ConfigError(f"n_beams {t_} exceeds n_ms={n_ms}")
    if n_cb_ > n_bs:
        raise ConfigError(f"combiner width {n_cb_} exceeds n_bs={n_bs}")
    if m_ < 0 or k_ < 1 or t_ < 1 or n_cb_ < 1:
        raise ConfigError("counts must be positive (m may be zero)")

    if pilot_kind == "dft":
        pilot = _unitary_dft(n_ms)[:, :t_]
    elif pilot_kind == "random":
        pilot = np.exp(2j * np.pi * rng.uniform(size=(n_ms, t_))) / math.sqrt(n_ms)
    else:
        raise ConfigError(f"unknown pilot_kind {pilot_kind!r}")
    pilot = math.sqrt(pilot_power) * pilot

    combiner = _unitary_dft(n_bs)[:, :n_cb_]

    def place_active() -> np.ndarray:
        if m_ == 0:
            return np.empty(0, dtype=int)
        if active_placement == "uniform":
            return np.floor(np.linspace(0, n_ris, m_, endpoint=False)).astype(int)
        if active_placement == "random":
            return np.sort(rng.choice(n_ris, size=m_, replace=False))
        raise ConfigError(f"unknown active_placement {active_placement!r}")

    active = place_active()
    schedule = None
    if vary_active_per_block:
        schedule = np.stack([np.sort(rng.choice(n_ris, size=m_, replace=False)) for _ in range(k_)])
        active = schedule[0]

    phases = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=(k_, n_ris)))
    for blk in range(k_):
        phases[blk, schedule[blk] if schedule is not None else active] = 0.0

    return TrainingConfig(
        n_blocks=k_,
        n_beams=t_,
        pilot=pilot,
        bs_combiner=combiner,
        active_set=active,
        phase_schedule=phases,
        pilot_power=pilot_power,
        n_rf_ris=fields["n_rf_ris"],
        n_rf_bs=fields["n_rf_bs"],
        active_schedule=schedule,
    )


def selection_matrix(cfg: TrainingConfig) -> np.ndarray:
    """Stacked row-selection matrix (``m*k x n_ris``) over all blocks."""
    rows = np.zeros((cfg.m * cfg.n_blocks, cfg.n_ris), dtype=complex)
    for k in range(cfg.n_blocks):
        active = cfg.active_for_block(k)
        for i, idx in enumerate(active):
            rows[k * cfg.m + i, idx] = 1.0
    return rows


@dataclass(frozen=True)
class RisObservation:
    """Stacked noisy receptions at the active surface elements."""

    y_h: np.ndarray       # (m*k, t)
    selection: np.ndarray  # (m*k, n_ris)


@dataclass(frozen=True)
class BsObservation:
    """Combined noisy receptions at the base station over all blocks."""

    y: np.ndarray       # (n_cb, t*k)
    u_true: np.ndarray  # (n_ris, t*k), noiseless reflected pilots (diagnostics)


def receive_at_ris(
    real: ChannelRealization,
    cfg: TrainingConfig,
    beta1: float,
    sigma2: float,
    rng: np.random.Generator,
) -> RisObservation:
    """Per-block active-element receptions, stacked row-wise.

    Block ``k`` contributes ``beta1 * h_mr[active] @ pilot`` plus selected
    complex Gaussian noise of per-entry variance ``sigma2``.
    """
    if cfg.m == 0:
        raise ConfigError("receive_at_ris requires at least one active element")
    if cfg.n_rf_ris < cfg.m:
        raise ConfigError("surface RF combining with n_rf_ris < m is not supported")
    if real.n_ris != cfg.n_ris or real.n_ms != cfg.n_ms:
        raise ValueError("channel and training dimensions disagree")
    blocks = []
    for k in range(cfg.n_blocks):
        active = cfg.active_for_block(k)
        signal = beta1 * (real.h_mr[active] @ cfg.pilot)
        noise = complex_normal(rng, signal.shape, sigma2) if sigma2 > 0 else 0.0
        blocks.append(signal + noise)
    return RisObservation(y_h=np.vstack(blocks), selection=selection_matrix(cfg))


def receive_at_bs(
    real: ChannelRealization,
    cfg: TrainingConfig,
    beta2: float,
    sigma2: float,
    rng: np.random.Generator,
) -> BsObservation:
    """Per-block combined receptions at the base station, stacked column-wise."""
    if real.n_ris != cfg.n_ris or real.n_ms != cfg.n_ms or real.n_bs != cfg.n_bs:
        raise ValueError("channel and training dimensions disagree")
    w_h = cfg.bs_combiner.conj().T
    y_blocks, u_blocks = [], []
    for k in range(cfg.n_blocks):
        u_k = cfg.phase_schedule[k][:, None] * (real.h_mr @ cfg.pilot)
        signal = beta2 * (w_h @ real.h_rb @ u_k)
        if sigma2 > 0:
            signal = signal + w_h @ complex_normal(rng, (cfg.n_bs, cfg.n_beams), sigma2)
        y_blocks.append(signal)
        u_blocks.append(u_k)
    return BsObservation(y=np.hstack(y_blocks), u_true=np.hstack(u_blocks))


def receive_passive(
    real: ChannelRealization,
    pilots: list[np.ndarray],
    combiners: list[np.ndarray],
    phase_diags: list[np.ndarray],
    beta2: float,
    sigma2: float,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Fully passive reference: per-block signals at the base station.

    Every surface element reflects (unit-modulus diagonals required); pilots
    and combiners may vary per block. Used for overhead and noise
    comparisons only.
    """
    if not len(pilots) == len(combiners) == len(phase_diags):
        raise ValueError("pilots, combiners and phase_diags must have equal length")
    out = []
    for x_k, w_k, diag in zip(pilots, combiners, phase_diags):
        diag = np.asarray(diag, dtype=complex)
        if diag.shape != (real.n_ris,):
            raise ValueError("phase diagonal has wrong length")
        if not np.allclose(np.abs(diag), 1.0, atol=1e-9):
            raise ValueError("passive phase diagonals must be unit-modulus")
        signal = beta2 * (w_k.conj().T @ real.h_rb @ (diag[:, None] * (real.h_mr @ x_k)))
        if sigma2 > 0:
            signal = signal + w_k.conj().T @ complex_normal(rng, (real.n_bs, x_k.shape[1]), sigma2)
        out.append(signal)
    return out


def training_overhead(cfg: TrainingConfig) -> int:
    """Pilot channel uses: ``k * t * ceil(n_cb/n_rf_bs) * ceil(m/n_rf_ris)``."""
    return (
        cfg.n_blocks
        * cfg.n_beams
        * math.ceil(cfg.n_cb / cfg.n_rf_bs)
        * math.ceil(cfg.m / cfg.n_rf_ris)
    )


def _complex_to_pairs(arr: np.ndarray) -> list:
    stacked = np.stack([arr.real, arr.imag], axis=-1)
    return stacked.tolist()


def _pairs_to_complex(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def training_config_to_json(cfg: TrainingConfig) -> str:
    """Serialize a schedule to JSON (complex entries as [re, im] pairs)."""
    doc = {
        "n_blocks": cfg.n_blocks,
        "n_beams": cfg.n_beams,
        "pilot": _complex_to_pairs(cfg.pilot),
        "bs_combiner": _complex_to_pairs(cfg.bs_combiner),
        "active_set": cfg.active_set.tolist(),
        "phase_schedule": _complex_to_pairs(cfg.phase_schedule),
        "pilot_power": cfg.pilot_power,
        "n_rf_ris": cfg.n_rf_ris,
        "n_rf_bs": cfg.n_rf_bs,
        "active_schedule": None if cfg.active_schedule is None else cfg.active_schedule.tolist(),
    }
    return json.dumps(doc)


def training_config_from_json(text: str) -> TrainingConfig:
    doc = json.loads(text)
    schedule = doc.get("active_schedule")
    return TrainingConfig(
        n_blocks=doc["n_blocks"],
        n_beams=doc["n_beams"],
        pilot=_pairs_to_complex(doc["pilot"]),
        bs_combiner=_pairs_to_complex(doc["bs_combiner"]),
        active_set=np.asarray(doc["active_set"], dtype=int),
        phase_schedule=_pairs_to_complex(doc["phase_schedule"]),
        pilot_power=doc["pilot_power"],
        n_rf_ris=doc["n_rf_ris"],
        n_rf_bs=doc["n_rf_bs"],
        active_schedule=None if schedule is None else np.asarray(schedule, dtype=int),
    )
