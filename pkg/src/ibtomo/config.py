"""Scenario configuration loaded from JSON with strict key checking.

Example (every key optional)::

    {
      "grid": {"n_r": 28, "n_z": 30, "r_min": 1.1, "r_max": 2.7, "z_min": -1.5, "z_max": 1.5},
      "flux_model": {"r0": 1.85, "z0": 0.0, "a": 0.65, "b": 1.05, "shift": 0.0},
      "mtanh": {"A": 2.0, "B": 2.0, "XSYM": 0.95, "HWID": 0.05, "alpha": 0.1},
      "chords": "default",
      "fmcw": {"count": 20, "sigma_star": 0.0},
      "kernel": [{"kind": "flux", "sigma": null, "length": null}],
      "model": "integrated",
      "std_frac": 0.0,
      "noise_frac": 0.0,
      "evidence": {"sigma_range": [0.1, 10], "sigma_count": 7, "length_range": null, "length_count": 9},
      "mask": {"factor": 0.001, "integrated": true},
      "sweep": {"grids": [[14, 15], [28, 30], [42, 45], [56, 60]], "std_levels": [0, 0.02, 0.05, 0.1]},
      "ensemble": {"levels": [0.01, 0.03, 0.05], "samples": 200, "std_frac": 0.02},
      "seed": 0,
      "output_dir": null
    }

``kernel`` may be a single object or a list with one entry per kind.  A kind
whose ``sigma`` and ``length`` are both given uses them as fixed
hyperparameters; otherwise they are selected by evidence maximization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .equilibrium import FluxModel
from .evaluation import STANDARD_GRIDS, STANDARD_STD_LEVELS
from .gp import Hyperparams, KernelKind
from .grid import Chord, GeometryError, build_grid, chords_from_json, default_fir_chords
from .scenario import Scenario, SearchSettings
from .synthetic import MtanhParams
from .tomography import MASK_FACTOR, ModelTag


class ConfigError(ValueError):
    pass


TOP_LEVEL_KEYS = {
    "grid", "flux_model", "mtanh", "chords", "fmcw", "kernel", "model", "std_frac",
    "noise_frac", "evidence", "mask", "sweep", "ensemble", "seed", "output_dir",
}


def _section(d: dict, key: str, allowed: set[str]) -> dict:
    sec = d.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{key!r} must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {key!r}: {sorted(unknown)}")
    return sec


def _nonneg(name: str, value) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if value < 0:
        raise ConfigError(f"{name} must be non-negative, got {value}")
    return value


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario = field(default_factory=Scenario)
    chords_source: Any = "default"
    fixed_hyper: dict[KernelKind, Hyperparams] = field(default_factory=dict)
    kernel: KernelKind = KernelKind.FLUX_SE
    model: ModelTag = ModelTag.INTEGRATED
    sweep_grids: tuple[tuple[int, int], ...] = STANDARD_GRIDS
    std_levels: tuple[float, ...] = STANDARD_STD_LEVELS
    ensemble_levels: tuple[float, ...] = (0.01, 0.03, 0.05)
    ensemble_samples: int = 200
    ensemble_std: float = 0.02
    seed: int = 0
    output_dir: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path = ".") -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        try:
            return cls._parse(raw, Path(base_dir))
        except ConfigError:
            raise
        except (GeometryError, ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def _parse(cls, raw: dict, base_dir: Path) -> "ScenarioConfig":
        grid_spec = {"n_r": 28, "n_z": 30, **_section(raw, "grid", {"n_r", "n_z", "r_min", "r_max", "z_min", "z_max"})}
        grid = build_grid(grid_spec)
        flux = FluxModel.from_dict(raw.get("flux_model") or {})
        flux.check_axis_inside(grid)
        mt = MtanhParams.from_dict(raw.get("mtanh") or {})

        chords_source = raw.get("chords", "default")
        chords = _load_chords(chords_source, base_dir)
        missing = [i for i, c in enumerate(chords) if c.enabled and c.clip(grid) is None]
        if missing:
            raise ConfigError(f"chord(s) {missing} do not intersect the grid bounding box")

        fmcw = _section(raw, "fmcw", {"count", "sigma_star"})
        count = int(fmcw.get("count", 20))
        if count < 0:
            raise ConfigError("fmcw.count must be non-negative")

        fixed: dict[KernelKind, Hyperparams] = {}
        kernels = raw.get("kernel", [])
        if isinstance(kernels, dict):
            kernels = [kernels]
        default_kind = None
        for entry in kernels:
            unknown = set(entry) - {"kind", "sigma", "length"}
            if unknown:
                raise ConfigError(f"unknown key(s) in kernel: {sorted(unknown)}")
            kind = KernelKind(entry.get("kind", "flux"))
            default_kind = default_kind or kind
            sigma, length = entry.get("sigma"), entry.get("length")
            if sigma is not None and length is not None:
                fixed[kind] = Hyperparams(float(sigma), float(length))
            elif (sigma is None) != (length is None):
                raise ConfigError(f"kernel {kind.value}: give both sigma and length or neither")

        ev = _section(raw, "evidence", {"sigma_range", "sigma_count", "length_range", "length_count"})
        search = SearchSettings(
            tuple(ev.get("sigma_range", (0.1, 10.0))),
            int(ev.get("sigma_count", 7)),
            None if ev.get("length_range") is None else tuple(ev["length_range"]),
            int(ev.get("length_count", 9)),
        )
        if search.sigma_count < 2 or search.length_count < 2:
            raise ConfigError("evidence search needs at least 2 candidates per axis")

        mask = _section(raw, "mask", {"factor", "integrated"})
        factor = float(mask.get("factor", MASK_FACTOR))
        if not 0 < factor <= 1:
            raise ConfigError(f"mask.factor must lie in (0, 1], got {factor}")

        sweep = _section(raw, "sweep", {"grids", "std_levels"})
        grids = tuple(tuple(int(x) for x in g) for g in sweep.get("grids", STANDARD_GRIDS))
        levels = tuple(_nonneg("sweep.std_levels", x) for x in sweep.get("std_levels", STANDARD_STD_LEVELS))
        if not grids or any(len(g) != 2 for g in grids):
            raise ConfigError("sweep.grids must be a nonempty list of [n_r, n_z] pairs")
        if not levels:
            raise ConfigError("sweep.std_levels must be nonempty")

        ens = _section(raw, "ensemble", {"levels", "samples", "std_frac"})
        ens_levels = tuple(_nonneg("ensemble.levels", x) for x in ens.get("levels", (0.01, 0.03, 0.05)))
        samples = int(ens.get("samples", 200))
        if not ens_levels:
            raise ConfigError("ensemble.levels must be nonempty")
        if samples < 1:
            raise ConfigError("ensemble.samples must be at least 1")

        scenario = Scenario(
            grid=grid,
            flux_model=flux,
            mtanh=mt,
            chords=tuple(chords),
            fmcw_count=count,
            sigma_star=_nonneg("fmcw.sigma_star", fmcw.get("sigma_star", 0.0)),
            std_frac=_nonneg("std_frac", raw.get("std_frac", 0.0)),
            noise_frac=_nonneg("noise_frac", raw.get("noise_frac", 0.0)),
            mask_factor=factor,
            mask_integrated=bool(mask.get("integrated", True)),
            search=search,
        )
        return cls(
            scenario=scenario,
            chords_source=chords_source,
            fixed_hyper=fixed,
            kernel=default_kind or KernelKind.FLUX_SE,
            model=ModelTag(raw.get("model", "integrated")),
            sweep_grids=grids,
            std_levels=levels,
            ensemble_levels=ens_levels,
            ensemble_samples=samples,
            ensemble_std=_nonneg("ensemble.std_frac", ens.get("std_frac", 0.02)),
            seed=int(raw.get("seed", 0)),
            output_dir=raw.get("output_dir"),
        )

    def to_dict(self) -> dict:
        """Fully resolved config; feeding it back reproduces the run."""
        s = self.scenario
        kernels = []
        for kind in KernelKind:
            h = self.fixed_hyper.get(kind)
            kernels.append({"kind": kind.value, "sigma": h and h.sigma, "length": h and h.length})
        kernels.sort(key=lambda k: k["kind"] != self.kernel.value)
        return {
            "grid": s.grid.to_dict(),
            "flux_model": s.flux_model.to_dict(),
            "mtanh": s.mtanh.to_dict(),
            "chords": [c.to_dict() | {"label": c.label} for c in s.chords],
            "fmcw": {"count": s.fmcw_count, "sigma_star": s.sigma_star},
            "kernel": kernels,
            "model": self.model.value,
            "std_frac": s.std_frac,
            "noise_frac": s.noise_frac,
            "evidence": {
                "sigma_range": list(s.search.sigma_range),
                "sigma_count": s.search.sigma_count,
                "length_range": None if s.search.length_range is None else list(s.search.length_range),
                "length_count": s.search.length_count,
            },
            "mask": {"factor": s.mask_factor, "integrated": s.mask_integrated},
            "sweep": {"grids": [list(g) for g in self.sweep_grids], "std_levels": list(self.std_levels)},
            "ensemble": {
                "levels": list(self.ensemble_levels),
                "samples": self.ensemble_samples,
                "std_frac": self.ensemble_std,
            },
            "seed": self.seed,
            "output_dir": self.output_dir,
        }


def _load_chords(source, base_dir: Path) -> list[Chord]:
    if source is None or source == "default":
        return default_fir_chords()
    if isinstance(source, str):
        path = Path(source)
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"chord file not found: {path}")
        return chords_from_json(path)
    if isinstance(source, list):
        return chords_from_json(source)
    raise ConfigError("chords must be 'default', a file path or a list of chord objects")
