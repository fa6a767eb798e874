"""Heterogeneous coefficients and the experiment source terms."""
from dataclasses import dataclass

import numpy as np


class MediumFormatError(ValueError):
    """Medium file could not be parsed."""


class DimensionMismatchError(MediumFormatError):
    pass


class NonPositiveCoefficientError(MediumFormatError):
    pass


class SourceDomainError(ValueError):
    """Source evaluated at its singular point."""


@dataclass(frozen=True, eq=False)
class Medium:
    """Per-fine-cell coefficient on ``grid`` (row-major, bottom row first)."""

    grid: object
    kappa: np.ndarray

    def __post_init__(self):
        kappa = np.asarray(self.kappa, dtype=float).ravel()
        if kappa.size != self.grid.num_fine_cells:
            raise DimensionMismatchError(
                f"expected {self.grid.num_fine_cells} cell values, got {kappa.size}")
        if not np.all(np.isfinite(kappa)):
            raise ValueError("kappa must be finite")
        if np.any(kappa <= 0):
            raise NonPositiveCoefficientError("kappa must be positive on every fine cell")
        kappa.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)

    @property
    def contrast(self):
        return self.kappa.max() / self.kappa.min()

    def scaled(self, c):
        return Medium(self.grid, c * self.kappa)


# Unit-square rectangles (x0, x1, y0, y1) set to the high value.
# Channels run boundary to boundary; inclusions stay inside one coarse cell
# of a 10x10 coarse grid.
DEFAULT_CHANNELS = (
    (0.0, 1.0, 0.300, 0.310),
    (0.600, 0.610, 0.0, 1.0),
)
DEFAULT_INCLUSIONS = tuple(
    (x, x + 0.03, y, y + 0.03)
    for x, y in [
        (0.13, 0.13), (0.43, 0.13), (0.83, 0.16),
        (0.23, 0.45), (0.45, 0.53), (0.83, 0.43),
        (0.13, 0.83), (0.53, 0.85), (0.84, 0.84),
        (0.33, 0.63), (0.73, 0.64),
    ]
)


def generate_default_medium(g, contrast=1e4):
    """Background 1 with high-valued channels and square inclusions.

    A fine cell takes the value ``contrast`` when its center lies in one of
    ``DEFAULT_CHANNELS`` or ``DEFAULT_INCLUSIONS``. The layout is given in
    unit-square coordinates, so it is resolved consistently on any grid
    fine enough to see features of width 0.01.
    """
    if not contrast >= 1:
        raise ValueError(f"contrast must be >= 1, got {contrast!r}")
    xc, yc = g.cell_centers[:, 0], g.cell_centers[:, 1]
    high = np.zeros(g.num_fine_cells, dtype=bool)
    for x0, x1, y0, y1 in DEFAULT_CHANNELS + DEFAULT_INCLUSIONS:
        high |= (xc >= x0) & (xc < x1) & (yc >= y0) & (yc < y1)
    kappa = np.ones(g.num_fine_cells)
    kappa[high] = contrast
    return Medium(g, kappa)


def read_cell_field(path):
    """Parse the plain-text cell-field format; returns an (ny, nx) array."""
    with open(path) as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    if not lines:
        raise MediumFormatError(f"{path}: empty file")
    try:
        nx, ny = (int(t) for t in lines[0].split())
    except ValueError:
        raise MediumFormatError(f"{path}: line 1: expected 'nx ny', got {lines[0]!r}") from None
    if nx < 1 or ny < 1:
        raise MediumFormatError(f"{path}: line 1: dimensions must be positive")
    rows = lines[1:]
    if len(rows) != ny:
        raise DimensionMismatchError(f"{path}: expected {ny} rows, found {len(rows)}")
    field = np.empty((ny, nx))
    for r, line in enumerate(rows):
        tokens = line.split()
        if len(tokens) != nx:
            raise DimensionMismatchError(
                f"{path}: row {r + 1}: expected {nx} values, found {len(tokens)}")
        for c, tok in enumerate(tokens):
            try:
                field[r, c] = float(tok)
            except ValueError:
                raise MediumFormatError(f"{path}: row {r + 1}, column {c + 1}: cannot parse {tok!r}") from None
    return field


def load_medium(g, path):
    field = read_cell_field(path)
    ny, nx = field.shape
    if (nx, ny) != (g.fine_nx, g.fine_ny):
        raise DimensionMismatchError(
            f"{path}: file is {nx}x{ny} cells, grid has {g.fine_nx}x{g.fine_ny}")
    bad = np.argwhere(~(field > 0))
    if bad.size:
        r, c = bad[0]
        raise NonPositiveCoefficientError(
            f"{path}: row {r + 1}, column {c + 1}: non-positive coefficient {field[r, c]!r}")
    return Medium(g, field.ravel())


def write_cell_field(path, values, nx, ny):
    values = np.asarray(values, dtype=float).reshape(ny, nx)
    with open(path, "w") as fh:
        fh.write(f"{nx} {ny}\n")
        for row in values:
            fh.write(" ".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def save_medium(m, path):
    write_cell_field(path, m.kappa, m.grid.fine_nx, m.grid.fine_ny)


@dataclass(frozen=True, eq=False)
class SourceTerm:
    """One of ``"f1"``, ``"f2"``, ``"f3"`` or ``"grid"`` (per-fine-cell values)."""

    kind: str
    values: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("f1", "f2", "f3", "grid"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "grid" and self.values is None:
            raise ValueError("grid source needs per-cell values")


_EXPONENTS = {"f1": -0.25, "f2": -0.75}


def evaluate_source(f, x, y):
    """Pointwise value of f1 or f2; vectorised over ``x``, ``y``."""
    if f.kind not in _EXPONENTS:
        raise ValueError(f"source {f.kind!r} has no pointwise rule")
    r2 = (np.asarray(x, dtype=float) - 0.5) ** 2 + (np.asarray(y, dtype=float) - 0.5) ** 2
    if np.any(r2 == 0):
        raise SourceDomainError("source is singular at (0.5, 0.5)")
    return r2 ** _EXPONENTS[f.kind]
