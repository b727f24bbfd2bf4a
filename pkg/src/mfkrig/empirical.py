"""Isherwood wind-load correlation and coefficient normalisation.

The correlation is the lowest-fidelity source of the stack. It is a linear
regression in seven dimensionless geometric ratios whose coefficients are
tabulated against the apparent wind angle ``phi`` (degrees, 0 = head wind,
180 = stern wind).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TableError

#: Order of the full (unreduced) input vector.
INPUT_NAMES = ("AL_LOA2", "C_LOA", "AT_B2", "LOA_B", "S_LOA", "M", "ASS_AL", "phi")
ANGLE_INDEX = 7
OUTPUT_NAMES = ("c_x", "c_y", "c_m")

TABLE_COLUMNS = (
    ("phi",)
    + tuple(f"A{k}" for k in range(7))
    + tuple(f"B{k}" for k in range(7))
    + tuple(f"D{k}" for k in range(6))
)

# Regressor columns of the input vector feeding A1..A5 / B1..B5 / D1..D5.
_SHARED_REGRESSORS = (0, 2, 3, 4, 1)


class RangeWarning(UserWarning):
    """Geometry ratio outside the correlation's validity range."""


@dataclass(frozen=True)
class ShipGeometry:
    """Dimensional ship parameters (SI units).

    Parameters
    ----------
    length_overall : float
        Overall length ``L_OA`` (m).
    beam : float
        Beam ``B`` (m).
    air_draft : float
        Height above waterline (m). Not used by the correlation.
    lateral_area, transverse_area : float
        Projected windage areas ``A_L`` and ``A_T`` (m^2).
    lateral_perimeter : float
        Perimeter ``S`` of the lateral projection (m).
    centroid_from_bow : float
        Distance ``C`` of the lateral-area centroid from the bow (m).
    superstructure_area : float
        Lateral area ``A_SS`` of the superstructure (m^2).
    container_groups : int
        Number ``M`` of distinct container groups in profile.
    """

    length_overall: float
    beam: float
    air_draft: float
    lateral_area: float
    transverse_area: float
    lateral_perimeter: float
    centroid_from_bow: float
    superstructure_area: float
    container_groups: int

    def __post_init__(self):
        positive = (
            "length_overall",
            "beam",
            "air_draft",
            "lateral_area",
            "transverse_area",
            "lateral_perimeter",
            "centroid_from_bow",
            "superstructure_area",
        )
        for name in positive:
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
        m = self.container_groups
        if m < 0 or int(m) != m:
            raise ValueError(f"container_groups must be a nonnegative integer, got {m!r}")
        if self.centroid_from_bow > self.length_overall:
            raise ValueError("centroid_from_bow must not exceed length_overall")
        if self.superstructure_area > self.lateral_area:
            raise ValueError("superstructure_area must not exceed lateral_area")

    def ratios(self):
        """Seven dimensionless ratios in :data:`INPUT_NAMES` order (no angle)."""
        L, B = self.length_overall, self.beam
        return np.array(
            [
                self.lateral_area / L**2,
                self.centroid_from_bow / L,
                self.transverse_area / B**2,
                L / B,
                self.lateral_perimeter / L,
                float(self.container_groups),
                self.superstructure_area / self.lateral_area,
            ]
        )

    def input_vector(self, phi):
        return np.append(self.ratios(), float(phi))


@dataclass(frozen=True)
class CoefficientTable:
    """Angle-tabulated regression coefficients plus validity ranges.

    ``a`` is ``(n_angles, 7)``, ``b`` is ``(n_angles, 7)`` and ``d`` is
    ``(n_angles, 6)``. ``lower``/``upper`` hold the validity range of each
    of the eight inputs, or are ``None`` when no ranges file was supplied.
    """

    phi: np.ndarray
    a: np.ndarray
    b: np.ndarray
    d: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 1 or phi.size < 2:
            raise TableError("angle grid needs at least two rows")
        if np.any(np.diff(phi) <= 0):
            raise TableError("angle grid must be strictly increasing")
        if phi[0] != 0.0 or phi[-1] != 180.0:
            raise TableError("angle grid must start at 0 and end at 180 degrees")
        shapes = {"a": 7, "b": 7, "d": 6}
        for name, width in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (phi.size, width):
                raise TableError(f"coefficient block {name!r} has shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise TableError(f"coefficient block {name!r} has missing values")

    @property
    def has_ranges(self):
        return self.lower is not None and self.upper is not None

    def rows(self, phi):
        """Piecewise-linear interpolation of the ``A``/``B``/``D`` rows.

        Returns three arrays of shape ``(n, 7)``, ``(n, 7)``, ``(n, 6)``.
        Grid angles return the stored rows exactly.
        """
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        grid = self.phi
        j = np.clip(np.searchsorted(grid, phi, side="right") - 1, 0, grid.size - 2)
        w = (phi - grid[j]) / (grid[j + 1] - grid[j])
        out = []
        for block in (self.a, self.b, self.d):
            lo, hi = block[j], block[j + 1]
            val = lo + w[:, None] * (hi - lo)
            # lo + 1*(hi - lo) is not hi in floating point
            top = w == 1.0
            val[top] = hi[top]
            out.append(val)
        return tuple(out)


@dataclass(frozen=True)
class LoadCoefficients:
    c_x: float
    c_y: float
    c_m: float

    def as_array(self):
        return np.array([self.c_x, self.c_y, self.c_m])


def coefficients_from_forces(f_x, f_y, m_z, rho, u, geom):
    """Normalise dimensional loads into ``(c_x, c_y, c_m)``.

    ``c_x`` uses the transverse area, ``c_y`` the lateral area and ``c_m``
    the lateral area times the overall length.
    """
    if not rho > 0:
        raise ValueError("air density must be positive")
    if not u > 0:
        raise ValueError("reference velocity must be positive")
    q = 0.5 * rho * u**2
    return LoadCoefficients(
        c_x=f_x / (q * geom.transverse_area),
        c_y=f_y / (q * geom.lateral_area),
        c_m=m_z / (q * geom.lateral_area * geom.length_overall),
    )


def isherwood_from_inputs(x, table, warn=True):
    """Evaluate the correlation on unscaled input vectors.

    Parameters
    ----------
    x : array_like, shape (n, 8) or (8,)
        Inputs in :data:`INPUT_NAMES` order, angle in degrees.
    table : CoefficientTable

    Returns
    -------
    ndarray, shape (n, 3) or (3,)
        Columns ``c_x, c_y, c_m``.
    """
    if table is None:
        raise TableError("no coefficient table supplied")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != len(INPUT_NAMES):
        raise ValueError(f"expected {len(INPUT_NAMES)} inputs, got {x.shape[1]}")
    phi = x[:, ANGLE_INDEX]
    if np.any(phi < 0) or np.any(phi > 180) or not np.all(np.isfinite(phi)):
        raise ValueError("angle of attack must lie in [0, 180] degrees")
    if warn and table.has_ranges:
        geo = x[:, :ANGLE_INDEX]
        outside = (geo < table.lower[:ANGLE_INDEX]) | (geo > table.upper[:ANGLE_INDEX])
        if np.any(outside):
            names = [INPUT_NAMES[k] for k in np.flatnonzero(outside.any(axis=0))]
            warnings.warn(
                f"inputs outside validity range, extrapolating: {', '.join(names)}",
                RangeWarning,
                stacklevel=2,
            )

    # The lateral-area regressor enters as 2 A_L / L_OA^2.
    regs = x[:, _SHARED_REGRESSORS].copy()
    regs[:, 0] *= 2.0
    a, b, d = table.rows(phi)
    c_x = a[:, 0] + np.sum(a[:, 1:6] * regs, axis=1) + a[:, 6] * x[:, 5]
    c_y = b[:, 0] + np.sum(b[:, 1:6] * regs, axis=1) + b[:, 6] * x[:, 6]
    c_m = d[:, 0] + np.sum(d[:, 1:6] * regs, axis=1)
    out = np.column_stack([c_x, c_y, c_m])
    return out[0] if single else out


def isherwood_coefficients(geom, phi, table):
    """Wind-load coefficients of ``geom`` at angle ``phi`` (degrees)."""
    phi = float(phi)
    if not 0.0 <= phi <= 180.0:
        raise ValueError(f"angle of attack must lie in [0, 180], got {phi}")
    c = isherwood_from_inputs(geom.input_vector(phi), table)
    return LoadCoefficients(*map(float, c))


def _bounds(bounds):
    if isinstance(bounds, CoefficientTable):
        if not bounds.has_ranges:
            raise ConfigError("coefficient table carries no validity ranges")
        lower, upper = bounds.lower, bounds.upper
    else:
        lower, upper = bounds
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper <= lower):
        bad = np.flatnonzero(upper <= lower)
        raise ConfigError(f"degenerate scaling range for component(s) {bad.tolist()}")
    return lower, upper


def scale_input(x, bounds):
    """Map inputs affinely so that range minimum -> 0 and maximum -> 1.

    ``bounds`` is a :class:`CoefficientTable` with ranges or a
    ``(lower, upper)`` pair of arrays.
    """
    lower, upper = _bounds(bounds)
    return (np.asarray(x, dtype=float) - lower) / (upper - lower)


def unscale_input(u, bounds):
    """Inverse of :func:`scale_input`."""
    lower, upper = _bounds(bounds)
    return lower + np.asarray(u, dtype=float) * (upper - lower)
