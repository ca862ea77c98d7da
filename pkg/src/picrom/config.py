"""Run configuration: benchmark defaults, overrides, validation, serialization.

A RunConfig is a flat record of every physics and solver knob. Construction
starts from a benchmark's default table; individual keys can then be
overridden from a JSON config file or repeated --override key=value flags.
The validated config is echoed verbatim into each run's output directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigurationError
from .sampling import BENCHMARKS

__all__ = ["RunConfig", "parse_override"]


@dataclass
class RunConfig:
    benchmark: str = "weak_landau"
    mode: str = "compare"

    # physics
    wavenumber: float = 0.5
    beam_speed: float = 0.0
    velocity_model: str = "maxwellian"
    alpha_range: tuple = (0.03, 0.06)
    sigma_range: tuple = (0.8, 1.0)
    params: list | None = None  # explicit (alpha, sigma) rows; overrides sampling

    # discretization
    num_particles: int = 50_000
    num_cells: int = 32
    dt: float = 0.0025
    t_final: float = 20.0

    # reduction
    num_params: int = 300
    subsample: int = 12
    basis_dim: int = 4
    deim_dim: int = 32
    window: int = 3
    deim_period: int = 3
    deim_update: int = 12
    svd_tol_dmd: float = 1e-5
    fp_tol: float = 1e-9
    fp_max_iter: int = 100

    # toggles
    hyper_reduction: bool = True
    printed_subset_variant: bool = False
    printed_deim_ranking: bool = False

    # recording
    energy_stride: int = 10
    snapshot_stride: int | None = None
    decomp_stride: int = 50
    rank_tol: float = 1e-4
    record_snapshots: bool = True

    # execution
    workers: int = 1
    output: str | None = None

    @classmethod
    def from_benchmark(cls, name, **overrides):
        if name not in BENCHMARKS:
            raise ConfigurationError(
                f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}"
            )
        bench = BENCHMARKS[name]
        base = dict(
            benchmark=name,
            wavenumber=bench.wavenumber,
            beam_speed=bench.beam_speed,
            velocity_model=bench.velocity_model,
            alpha_range=tuple(bench.alpha_range),
            sigma_range=tuple(bench.sigma_range),
        )
        base.update(bench.defaults)
        base.update(overrides)
        cfg = cls(**base)
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "benchmark" in data and data["benchmark"] in BENCHMARKS:
            merged = dict(data)
            name = merged.pop("benchmark")
            cfg = cls.from_benchmark(name, **merged)
        else:
            cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self):
        if self.mode not in ("full", "rom", "compare"):
            raise ConfigurationError(f"mode must be full|rom|compare, got {self.mode!r}")
        if self.velocity_model not in ("maxwellian", "two_stream"):
            raise ConfigurationError(f"unknown velocity model {self.velocity_model!r}")
        if self.num_particles < 1 or self.num_cells < 2:
            raise ConfigurationError("need at least one particle and two cells")
        if self.dt <= 0 or self.t_final <= 0:
            raise ConfigurationError("dt and t_final must be positive")
        if self.basis_dim % 2 or self.basis_dim < 2:
            raise ConfigurationError("basis dimension must be even and >= 2")
        a0, a1 = self.alpha_range
        s0, s1 = self.sigma_range
        if not (a1 >= a0 and s1 >= s0):
            raise ConfigurationError("parameter ranges must be ordered (lo, hi)")
        if self.params is not None:
            arr = np.asarray(self.params, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ConfigurationError("explicit params must be (p, 2) rows")
            eps = 1e-12
            if ((arr[:, 0] < a0 - eps) | (arr[:, 0] > a1 + eps)
                    | (arr[:, 1] < s0 - eps) | (arr[:, 1] > s1 + eps)).any():
                raise ConfigurationError("explicit params fall outside the parameter box")
            self.num_params = arr.shape[0]
        if not 1 <= self.subsample <= self.num_params:
            raise ConfigurationError("subsample size must be in [1, num_params]")
        if self.subsample < self.basis_dim:
            raise ConfigurationError("subsample must hold at least basis_dim columns")
        if self.window < 1:
            raise ConfigurationError("window length must be >= 1")
        if self.deim_dim < 1 or self.deim_period < 1:
            raise ConfigurationError("deim_dim and deim_period must be >= 1")
        if not 1 <= self.deim_update <= self.deim_dim:
            raise ConfigurationError("deim_update must be in [1, deim_dim]")
        if not 0 < self.rank_tol < 1:
            raise ConfigurationError("rank_tol must be in (0, 1)")
        for name in ("svd_tol_dmd", "fp_tol"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.energy_stride < 1 or self.decomp_stride < 1:
            raise ConfigurationError("strides must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        return self

    def to_dict(self):
        out = asdict(self)
        out["alpha_range"] = list(self.alpha_range)
        out["sigma_range"] = list(self.sigma_range)
        if self.params is not None:
            out["params"] = [list(map(float, row)) for row in np.asarray(self.params)]
        return out

    def resolve_params(self):
        """Explicit parameter rows if given, else the quasirandom sample."""
        from .sampling import sample_parameters

        if self.params is not None:
            return np.asarray(self.params, dtype=float)
        return sample_parameters(self.alpha_range, self.sigma_range, self.num_params)

    def apply_overrides(self, pairs):
        """Apply repeated key=value override strings in order, then revalidate."""
        known = {f.name for f in fields(self)}
        for pair in pairs:
            key, value = parse_override(pair)
            if key not in known:
                raise ConfigurationError(f"unknown config key {key!r}")
            current = getattr(self, key)
            if key in ("alpha_range", "sigma_range"):
                value = tuple(value)
            elif isinstance(current, bool):
                value = bool(value)
            elif isinstance(current, int) and not isinstance(value, bool) \
                    and value is not None and key != "snapshot_stride":
                value = int(value)
            setattr(self, key, value)
        self.validate()
        return self


def parse_override(pair):
    """Split 'key=value'; the value is parsed as JSON, falling back to a string."""
    if "=" not in pair:
        raise ConfigurationError(f"override {pair!r} is not of the form key=value")
    key, raw = pair.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
