"""Reconstruction grid, interferometer chords and the contribution matrix.

The grid is a rectangle in the poloidal (R, Z) plane divided into
``n_r x n_z`` cells. The unknown field is piecewise constant on cells and is
stored at cell centres in row-major order (R varies fastest), so node ``i``
sits in column ``i % n_r`` and row ``i // n_r``.

A chord is an infinite straight line given by a pivot point and an
inclination angle (degrees, counter-clockwise from the +R axis). It is
clipped to the grid bounding box; the contribution matrix holds the exact
length of each clipped chord inside every cell.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Chords closer than this to a cell boundary (in units of cell width) are
# treated as lying on it and split evenly between the two neighbours.
_BOUNDARY_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for malformed grids or chords that miss the grid."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Grid:
    """Rectangular grid of cells; nodes are the cell centres."""

    n_r: int
    n_z: int
    r_min: float = 1.1
    r_max: float = 2.7
    z_min: float = -1.5
    z_max: float = 1.5

    def __post_init__(self):
        for name in ("n_r", "n_z"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise GeometryError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("r_min", "r_max", "z_min", "z_max"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise GeometryError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if not self.r_min < self.r_max:
            raise GeometryError(f"r_max ({self.r_max}) must exceed r_min ({self.r_min})")
        if not self.z_min < self.z_max:
            raise GeometryError(f"z_max ({self.z_max}) must exceed z_min ({self.z_min})")

    @property
    def m(self) -> int:
        return self.n_r * self.n_z

    @property
    def dr(self) -> float:
        return (self.r_max - self.r_min) / self.n_r

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / self.n_z

    # Centres are offset from the box midpoint so that mirror-image nodes
    # have bit-identical distances from it.
    @property
    def r_centers(self) -> np.ndarray:
        return 0.5 * (self.r_min + self.r_max) + (np.arange(self.n_r) - 0.5 * (self.n_r - 1)) * self.dr

    @property
    def z_centers(self) -> np.ndarray:
        return 0.5 * (self.z_min + self.z_max) + (np.arange(self.n_z) - 0.5 * (self.n_z - 1)) * self.dz

    @property
    def r_edges(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.n_r + 1)

    @property
    def z_edges(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.n_z + 1)

    @property
    def nodes(self) -> np.ndarray:
        """``(m, 2)`` array of cell-centre coordinates, row-major."""
        rr, zz = np.meshgrid(self.r_centers, self.z_centers)
        return _frozen(np.column_stack([rr.ravel(), zz.ravel()]))

    def node_index(self, i_r: int, i_z: int) -> int:
        return i_z * self.n_r + i_r

    def to_dict(self) -> dict:
        return {
            "n_r": self.n_r,
            "n_z": self.n_z,
            "r_min": self.r_min,
            "r_max": self.r_max,
            "z_min": self.z_min,
            "z_max": self.z_max,
        }


def build_grid(spec: dict | None = None, **kwargs) -> Grid:
    """Build a :class:`Grid` from a mapping of ``n_r, n_z, r_min, ...``.

    Unknown keys are rejected so that typos in configs surface early.
    """
    params = dict(spec or {})
    params.update(kwargs)
    allowed = {"n_r", "n_z", "r_min", "r_max", "z_min", "z_max"}
    unknown = set(params) - allowed
    if unknown:
        raise GeometryError(f"unknown grid field(s): {sorted(unknown)}")
    missing = {"n_r", "n_z"} - set(params)
    if missing:
        raise GeometryError(f"missing grid field(s): {sorted(missing)}")
    return Grid(**params)


@dataclass(frozen=True)
class Chord:
    """Straight line of sight through a pivot point.

    Parameters
    ----------
    pivot_r, pivot_z : float
        Pivot coordinates in metres.  The pivot may lie outside the grid.
    angle_deg : float
        Inclination from the horizontal, counter-clockwise positive.
    enabled : bool
        Disabled chords are skipped by :func:`contribution_matrix`.
    label : str
        Free-form channel name used in output files.
    """

    pivot_r: float
    pivot_z: float
    angle_deg: float = 0.0
    enabled: bool = True
    label: str = ""

    @property
    def direction(self) -> tuple[float, float]:
        theta = math.radians(self.angle_deg)
        return math.cos(theta), math.sin(theta)

    def clip(self, grid: Grid) -> tuple[float, float] | None:
        """Parameter interval ``(t0, t1)`` of the line inside the grid box.

        ``t`` is arc length measured from the pivot.  Returns ``None`` when
        the line misses the box or only touches it at a single point.
        """
        cr, cz = self.direction
        t0, t1 = -math.inf, math.inf
        for p, c, lo, hi in (
            (self.pivot_r, cr, grid.r_min, grid.r_max),
            (self.pivot_z, cz, grid.z_min, grid.z_max),
        ):
            if abs(c) < 1e-15:
                if p < lo or p > hi:
                    return None
                continue
            a, b = (lo - p) / c, (hi - p) / c
            if a > b:
                a, b = b, a
            t0, t1 = max(t0, a), min(t1, b)
        if t1 - t0 <= 1e-12:
            return None
        return t0, t1

    def endpoints(self, grid: Grid) -> tuple[tuple[float, float], tuple[float, float]]:
        """Entry and exit points of the chord on the grid boundary."""
        span = self.clip(grid)
        if span is None:
            raise GeometryError(f"chord {self.label or self} does not intersect the grid")
        cr, cz = self.direction
        return tuple(
            (self.pivot_r + t * cr, self.pivot_z + t * cz) for t in span
        )  # type: ignore[return-value]

    def clipped_length(self, grid: Grid) -> float:
        span = self.clip(grid)
        return 0.0 if span is None else span[1] - span[0]

    def to_dict(self) -> dict:
        return {
            "pivot_r": self.pivot_r,
            "pivot_z": self.pivot_z,
            "angle_deg": self.angle_deg,
            "enabled": self.enabled,
        }


_FIR_HORIZONTAL_Z = (0.765, 0.200, 0.100, 0.0, -0.100, -0.200, -0.760, -0.970)
_FIR_OBLIQUE = ((0.724, -23.0), (0.615, -23.0), (-0.518, 21.5), (-0.626, 21.5), (-0.733, 21.5))
_FIR_OBLIQUE_R = 1.050


def default_fir_chords() -> list[Chord]:
    """The 13 far-infrared interferometer channels (8 horizontal, 5 oblique).

    Horizontal chords carry no meaningful pivot R; they are pivoted at the
    oblique-channel radius for uniformity.
    """
    chords = [
        Chord(_FIR_OBLIQUE_R, z, 0.0, label=f"H{i + 1}")
        for i, z in enumerate(_FIR_HORIZONTAL_Z)
    ]
    chords += [
        Chord(_FIR_OBLIQUE_R, z, angle, label=f"O{i + 1}")
        for i, (z, angle) in enumerate(_FIR_OBLIQUE)
    ]
    return chords


def chords_from_json(source: str | Path | Sequence[dict]) -> list[Chord]:
    """Load chords from a JSON file path or an already-parsed list."""
    if isinstance(source, (str, Path)):
        items = json.loads(Path(source).read_text())
    else:
        items = source
    allowed = {"pivot_r", "pivot_z", "angle_deg", "enabled", "label"}
    chords = []
    for i, item in enumerate(items):
        unknown = set(item) - allowed
        if unknown:
            raise GeometryError(f"chord {i}: unknown field(s) {sorted(unknown)}")
        try:
            chords.append(
                Chord(
                    float(item["pivot_r"]),
                    float(item["pivot_z"]),
                    float(item.get("angle_deg", 0.0)),
                    bool(item.get("enabled", True)),
                    str(item.get("label", f"C{i + 1}")),
                )
            )
        except KeyError as exc:
            raise GeometryError(f"chord {i}: missing field {exc.args[0]!r}") from None
    return chords


def _axis_weights(u: float, n: int) -> list[tuple[int, float]]:
    """Cell indices (with weights) for a position ``u`` in cell units."""
    k = round(u)
    if abs(u - k) < _BOUNDARY_TOL and 0 < k < n:
        return [(k - 1, 0.5), (k, 0.5)]
    return [(min(max(int(math.floor(u)), 0), n - 1), 1.0)]


def _trace(grid: Grid, chord: Chord) -> dict[int, float]:
    """Path length of one chord in each cell it crosses.

    Collects every parameter value where the chord crosses a vertical or
    horizontal cell boundary, sorts them, and assigns each segment between
    successive crossings to the cell that contains its midpoint.
    """
    span = chord.clip(grid)
    if span is None:
        raise GeometryError("chord does not intersect the grid")
    t0, t1 = span
    cr, cz = chord.direction
    ts = [np.array([t0, t1])]
    if abs(cr) > 1e-15:
        ts.append((grid.r_edges - chord.pivot_r) / cr)
    if abs(cz) > 1e-15:
        ts.append((grid.z_edges - chord.pivot_z) / cz)
    t = np.concatenate(ts)
    t = np.unique(t[(t >= t0) & (t <= t1)])

    lengths: dict[int, float] = {}
    seg = np.diff(t)
    mids = 0.5 * (t[1:] + t[:-1])
    for length, tm in zip(seg, mids):
        if length <= 0.0:
            continue
        u_r = (chord.pivot_r + tm * cr - grid.r_min) / grid.dr
        u_z = (chord.pivot_z + tm * cz - grid.z_min) / grid.dz
        for i_r, w_r in _axis_weights(u_r, grid.n_r):
            for i_z, w_z in _axis_weights(u_z, grid.n_z):
                i = grid.node_index(i_r, i_z)
                lengths[i] = lengths.get(i, 0.0) + length * w_r * w_z
    return lengths


@dataclass(frozen=True)
class ContributionMatrix:
    """``k x m`` matrix of chord path lengths per cell (metres)."""

    entries: np.ndarray
    chords: tuple[Chord, ...]
    grid: Grid
    lengths: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]

    def __matmul__(self, other):
        return self.entries @ other


def contribution_matrix(grid: Grid, chords: Iterable[Chord]) -> ContributionMatrix:
    """Assemble the contribution matrix for the enabled chords.

    Raises
    ------
    GeometryError
        If any enabled chord misses the grid bounding box; the message lists
        the offending chord indices (positions in the input list).
    """
    chords = list(chords)
    active = [(i, c) for i, c in enumerate(chords) if c.enabled]
    missing = [i for i, c in active if c.clip(grid) is None]
    if missing:
        raise GeometryError(f"chord(s) {missing} do not intersect the grid bounding box")

    entries = np.zeros((len(active), grid.m))
    for row, (_, chord) in enumerate(active):
        for i, length in _trace(grid, chord).items():
            entries[row, i] = length
    lengths = np.array([c.clipped_length(grid) for _, c in active])
    return ContributionMatrix(
        _frozen(entries.reshape(len(active), grid.m)),
        tuple(c for _, c in active),
        grid,
        _frozen(lengths),
    )
