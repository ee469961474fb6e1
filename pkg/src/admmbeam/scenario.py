"""Scenario files and the stochastic channel model.

Scenario files are flat ``key = value`` text; ``#`` starts a comment and
arrays are comma-separated.  Unknown keys are rejected.  Documented keys
(defaults in :class:`Scenario`):

half_width_m        APs and users are dropped uniformly in [-w, w]^2
L, K, antennas      network size; ``antennas`` is one count or one per AP
field_mode          complex | real
pathloss_a/b        path loss a + b*log10(d / 1000 m) in dB
shadowing_db        lognormal shadowing standard deviation
antenna_gain_dbi    transmit antenna gain
min_distance_m      distances are clamped below at this value
noise_dbm           receiver noise power
snr_db              transmit SNR list (see :meth:`Scenario.power_for_snr`)
snr_reference_m     distance at which the transmit SNR is referenced
power_dbm           per-AP budget for ``maxmin``; overrides snr_db[0]
density_L           AP counts of the density sweep
density_ratio       users per AP in the density sweep
density_antennas    antennas per AP in the density sweep
density_snr_db      transmit SNR of the density sweep
seed, trials        Monte-Carlo control
eps, max_iter, alpha, normalize, eps_rate    solver settings
bench_L, bench_ratio, bench_antennas, bench_repeats    benchmark sizes
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .beamforming import ChannelRealization, NetworkConfig
from .hsd import SolverSettings


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario file."""


@dataclass
class Scenario:
    half_width_m: float = 5000.0
    L: int = 10
    K: int = 5
    antennas: tuple[int, ...] = (1,)
    field_mode: str = "complex"
    pathloss_a: float = 128.1
    pathloss_b: float = 37.6
    shadowing_db: float = 8.0
    antenna_gain_dbi: float = 9.0
    min_distance_m: float = 35.0
    noise_dbm: float = -102.0
    snr_db: tuple[float, ...] = (0.0, 5.0, 10.0)
    snr_reference_m: float = 1000.0
    power_dbm: float | None = None
    density_L: tuple[int, ...] = (2, 4, 6, 8)
    density_ratio: float = 1.0
    density_antennas: int = 2
    density_snr_db: float = 10.0
    seed: int = 0
    trials: int = 10
    eps: float = 1e-3
    max_iter: int = 5000
    alpha: float = 1.5
    normalize: bool = True
    eps_rate: float = 0.01
    bench_L: tuple[int, ...] = (2, 5, 10, 20, 40)
    bench_ratio: float = 0.5
    bench_antennas: int = 2
    bench_repeats: int = 5

    def __post_init__(self):
        if self.trials < 1:
            raise ScenarioError("trials must be >= 1")
        if self.L < 1 or self.K < 1:
            raise ScenarioError("L and K must be >= 1")
        if self.field_mode not in ("real", "complex"):
            raise ScenarioError(f"field_mode must be real or complex, got {self.field_mode!r}")
        if self.half_width_m <= 0 or self.min_distance_m <= 0 or self.snr_reference_m <= 0:
            raise ScenarioError("distances must be > 0")
        if self.eps_rate <= 0 or self.eps <= 0:
            raise ScenarioError("eps and eps_rate must be > 0")

    def antennas_for(self, L: int) -> tuple[int, ...]:
        if len(self.antennas) == 1:
            return (self.antennas[0],) * L
        if len(self.antennas) != L:
            raise ScenarioError(f"antennas lists {len(self.antennas)} counts but L={L}")
        return tuple(self.antennas)

    @property
    def noise_w(self) -> float:
        return 10.0 ** ((self.noise_dbm - 30.0) / 10.0)

    def pathloss_db(self, d_m):
        return self.pathloss_a + self.pathloss_b * np.log10(np.maximum(d_m, self.min_distance_m) / 1000.0)

    def power_for_snr(self, snr_db: float) -> float:
        """Per-AP budget (W) giving receive SNR ``snr_db`` at ``snr_reference_m``.

        The transmit SNR is ``P g_ref / sigma^2`` with ``g_ref`` the mean
        large-scale gain (path loss and antenna gain, no shadowing) at the
        reference distance.
        """
        g_ref = 10.0 ** (-(self.pathloss_db(self.snr_reference_m) - self.antenna_gain_dbi) / 10.0)
        return self.noise_w * 10.0 ** (snr_db / 10.0) / g_ref

    def network(self, power_w: float, L: int | None = None, K: int | None = None) -> NetworkConfig:
        L = self.L if L is None else L
        K = self.K if K is None else K
        return NetworkConfig(L, K, self.antennas_for(L), power_w, self.noise_w, None, self.field_mode)

    def solver_settings(self, **over) -> SolverSettings:
        kw = dict(eps=self.eps, max_iter=self.max_iter, alpha=self.alpha, normalize=self.normalize)
        kw.update(over)
        return SolverSettings(**kw)

    def header_items(self) -> list[tuple[str, str]]:
        return [(f.name, _format_value(getattr(self, f.name))) for f in dataclasses.fields(self)]

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def _convert(f: dataclasses.Field, raw: str):
    raw = raw.strip()
    hint = str(f.type)
    try:
        if hint.startswith("tuple"):
            inner = int if "int" in hint else float
            return tuple(inner(x) for x in raw.split(",") if x.strip())
        if hint == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if hint.startswith("int"):
            return int(raw)
        if hint.startswith("float"):
            return None if raw.lower() == "none" else float(raw)
        return raw
    except ValueError as exc:
        raise ScenarioError(f"bad value for {f.name}: {raw!r}") from exc


def parse_scenario(text: str, **overrides) -> Scenario:
    fields = {f.name: f for f in dataclasses.fields(Scenario)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(fields[key], raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Scenario(**values)


def load_scenario(path: str | Path | None, **overrides) -> Scenario:
    text = "" if path is None else Path(path).read_text()
    return parse_scenario(text, **overrides)


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Independent stream per trial, fixed by ``(seed, trial_index)`` alone."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial_index)]))


def large_scale_factor(scenario: Scenario, d_m, shadow) -> np.ndarray:
    """``10^(-PL(d)/20) sqrt(phi s)`` with ``shadow`` the lognormal factor ``s``."""
    phi = 10.0 ** (scenario.antenna_gain_dbi / 10.0)
    return 10.0 ** (-scenario.pathloss_db(d_m) / 20.0) * np.sqrt(phi * shadow)


def generate_channels(scenario: Scenario, trial_index: int, L: int | None = None, K: int | None = None) -> ChannelRealization:
    """Draw AP/user positions, shadowing and fading for one trial."""
    L = scenario.L if L is None else L
    K = scenario.K if K is None else K
    ants = scenario.antennas_for(L)
    N = sum(ants)
    rng = trial_rng(scenario.seed, trial_index)
    w = scenario.half_width_m
    aps = rng.uniform(-w, w, size=(L, 2))
    users = rng.uniform(-w, w, size=(K, 2))
    d = np.linalg.norm(users[:, None, :] - aps[None, :, :], axis=2)
    shadow = 10.0 ** (scenario.shadowing_db * rng.standard_normal((K, L)) / 10.0)
    D = large_scale_factor(scenario, d, shadow)
    if scenario.field_mode == "complex":
        f = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / math.sqrt(2.0)
    else:
        f = rng.standard_normal((K, N))
    per_antenna = np.repeat(D, ants, axis=1)
    return ChannelRealization(per_antenna * f)
