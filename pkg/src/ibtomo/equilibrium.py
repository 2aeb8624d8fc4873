"""Analytic normalized-flux model used in place of a reconstructed equilibrium.

Flux surfaces are nested ellipses centred on the magnetic axis, optionally
pushed outward by a Shafranov-like shift that vanishes at the last closed
flux surface (LCFS)::

    psi0 = (R - R0)**2 / a**2 + (Z - Z0)**2 / b**2
    psi  = (R - R0 - s * (1 - psi0))**2 / a**2 + (Z - Z0)**2 / b**2

``psi`` is 0 on the axis and 1 on the LCFS (for ``s = 0`` exactly on the
ellipse with semi-axes ``a`` and ``b``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid


@dataclass(frozen=True)
class FluxModel:
    r0: float = 1.85
    z0: float = 0.0
    a: float = 0.65
    b: float = 1.05
    shift: float = 0.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"LCFS semi-axes must be positive, got a={self.a}, b={self.b}")

    def __call__(self, r, z):
        return normalized_flux(self, r, z)

    def to_dict(self) -> dict:
        return {"r0": self.r0, "z0": self.z0, "a": self.a, "b": self.b, "shift": self.shift}

    @classmethod
    def from_dict(cls, d: dict) -> "FluxModel":
        unknown = set(d) - {"r0", "z0", "a", "b", "shift"}
        if unknown:
            raise ValueError(f"unknown flux_model field(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def from_json(cls, path: str | Path) -> "FluxModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def check_axis_inside(self, grid: Grid) -> None:
        if not (grid.r_min < self.r0 < grid.r_max and grid.z_min < self.z0 < grid.z_max):
            raise ValueError(
                f"magnetic axis ({self.r0}, {self.z0}) lies outside the grid bounding box"
            )


def normalized_flux(model: FluxModel, r, z):
    """Normalized flux at ``(r, z)``; broadcasts over arrays."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    dz2 = ((z - model.z0) / model.b) ** 2
    if model.shift == 0.0:
        psi = ((r - model.r0) / model.a) ** 2 + dz2
    else:
        psi0 = ((r - model.r0) / model.a) ** 2 + dz2
        psi = ((r - model.r0 - model.shift * (1.0 - psi0)) / model.a) ** 2 + dz2
    return psi if psi.ndim else float(psi)


def inside_lcfs(model: FluxModel, r, z):
    """True strictly inside the LCFS; the surface itself counts as outside."""
    return np.asarray(normalized_flux(model, r, z)) < 1.0


@dataclass(frozen=True)
class FluxMap:
    values: np.ndarray
    model: FluxModel
    grid: Grid

    @property
    def inside(self) -> np.ndarray:
        return self.values < 1.0

    def to_csv(self, path: str | Path) -> None:
        nodes = self.grid.nodes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_index", "r", "z", "psi_norm"])
            for i, ((r, z), psi) in enumerate(zip(nodes, self.values)):
                w.writerow([i, repr(float(r)), repr(float(z)), repr(float(psi))])


def flux_map(model: FluxModel, grid: Grid) -> FluxMap:
    nodes = grid.nodes
    values = np.asarray(normalized_flux(model, nodes[:, 0], nodes[:, 1]), dtype=float)
    values = np.atleast_1d(values).copy()
    values.flags.writeable = False
    return FluxMap(values, model, grid)
