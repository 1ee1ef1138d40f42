"""Structured-grid finite differences shared by every solver in the package.

Grids are tensor products over a rectangle.  The first coordinate (called y
here, the film-depth coordinate in the physical solvers) carries a Dirichlet
condition on its first row and a reflecting homogeneous Neumann condition on
its last row; the second coordinate z is periodic.  Everything is built from
the centred second-order difference quotients

    D+D-y u = (u[i+1,j] - 2 u[i,j] + u[i-1,j]) / hy**2
    D0y   u = (u[i+1,j] - u[i-1,j]) / (2 hy)
    D0yD0z u = (u[i+1,j+1] - u[i+1,j-1] - u[i-1,j+1] + u[i-1,j-1]) / (4 hy hz)

and their z analogues.  The Neumann row is closed with a ghost row: the
centred boundary derivative D0y u = 0 identifies the ghost values with the
row below, which folds the ghost entries back onto that row and cancels the
D0y and mixed-derivative contributions there exactly.  The periodic
direction keeps a single copy of the seam column (the last column aliases
the first) so the assembled system has full rank; the duplicate column is
reconstructed on output.  Unknowns are therefore the ny*nz node values with
row index i = 1..ny and column index j = 0..nz-1.

The assembled matrix has at most nine entries per row and is factorized by
a sparse direct LU (SuperLU with minimum-degree ordering on A^T + A, which
is markedly faster than the default ordering on this nearly symmetric
pattern).  One :class:`EllipticOperator` can solve many right-hand sides
against a single factorization, which the expansion and sensitivity solvers
rely on heavily.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Grid2D",
    "Field2D",
    "PdeCoefficients",
    "SparseSystem",
    "EllipticOperator",
    "SolverError",
    "assemble",
    "solve",
    "solution_field",
    "trapezoid_2d",
    "trapezoid_1d",
    "one_sided_dx_at_boundary",
    "stencil_values",
    "DifferenceQuotients",
]

#: Relative residual accepted from the direct solver.  Fixed once so that
#: downstream tolerances do not depend on the backend.
RESIDUAL_RTOL = 1e-10

_PERMC_SPEC = "MMD_AT_PLUS_A"


class SolverError(RuntimeError):
    """Linear solve failed or produced an unacceptable residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Grid2D:
    """Uniform tensor grid with ny x nz cells ((ny+1) x (nz+1) nodes)."""

    ny: int
    nz: int
    hy: float
    hz: float

    def __post_init__(self):
        if self.ny < 4 or self.nz < 4:
            raise ValueError("need at least 4 cells in each direction")
        if self.hy <= 0 or self.hz <= 0:
            raise ValueError("grid spacings must be positive")

    @classmethod
    def unit(cls, ny: int, nz: int | None = None) -> "Grid2D":
        nz = ny if nz is None else nz
        return cls(ny, nz, 1.0 / ny, 1.0 / nz)

    @classmethod
    def rect(cls, ny: int, nz: int, height: float, width: float) -> "Grid2D":
        return cls(ny, nz, height / ny, width / nz)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny + 1, self.nz + 1)

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.ny + 1) * self.hy

    @property
    def z(self) -> np.ndarray:
        return np.arange(self.nz + 1) * self.hz


@dataclass
class Field2D:
    """Node values on a :class:`Grid2D`; column nz aliases column 0 when the
    field is periodic in z (all solver output satisfies this by
    construction)."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"shape {self.grid.shape}")

    def to_csv(self, path) -> None:
        """Write rows (y, z, value) with a header, for external plotting."""
        y, z = self.grid.y, self.grid.z
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["y", "z", "value"])
            for i in range(self.grid.ny + 1):
                for j in range(self.grid.nz + 1):
                    writer.writerow([f"{y[i]:.17g}", f"{z[j]:.17g}",
                                     f"{self.values[i, j]:.17g}"])


@dataclass(frozen=True)
class PdeCoefficients:
    """Node coefficients of  cyy u_yy + czz u_zz + cyz u_yz + cy u_y + c0 u.

    Each entry may be a scalar or an array broadcastable to the node shape
    (ny+1, nz+1); z-only profiles are passed as shape (nz+1,), y-only ones
    as (ny+1, 1).
    """

    cyy: object
    czz: object
    cyz: object = 0.0
    cy: object = 0.0
    c0: object = 0.0


@dataclass
class SparseSystem:
    """Assembled linear system over the ny*nz unknowns.

    ``matrix`` rows follow the unknown layout idx = (i-1)*nz + j.  Each
    equation is normalized by the magnitude of its diagonal stencil weight
    (``row_scale`` holds those magnitudes), which keeps the residual
    tolerance meaningful when the mapped geometry stretches coefficient
    magnitudes across many orders; multiplying a row by its scale recovers
    the raw stencil action.  The Dirichlet values that were eliminated into
    ``rhs`` are kept so the full node field can be reconstructed from a
    solution vector.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    grid: Grid2D
    dirichlet: np.ndarray
    row_scale: np.ndarray

    @property
    def n(self) -> int:
        return self.rhs.size

    def unknown_index(self, i: int, j: int) -> int:
        """Flat index of node (i, j); i in 1..ny, any j (periodic wrap)."""
        if not 1 <= i <= self.grid.ny:
            raise ValueError(f"row {i} is not an unknown row")
        return (i - 1) * self.grid.nz + (j % self.grid.nz)


def _broadcast(value, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), shape)


class EllipticOperator:
    """Stencil matrix for fixed coefficients, reusable across right-hand
    sides and Dirichlet data.

    The matrix depends only on the coefficients, so it is assembled and
    factorized once; :meth:`solve_field` then costs two triangular solves.
    """

    def __init__(self, grid: Grid2D, coeffs: PdeCoefficients):
        self.grid = grid
        ny, nz = grid.ny, grid.nz
        shape = grid.shape

        cyy = _broadcast(coeffs.cyy, shape)[1:, :nz]
        czz = _broadcast(coeffs.czz, shape)[1:, :nz]
        cyz = _broadcast(coeffs.cyz, shape)[1:, :nz]
        cy = _broadcast(coeffs.cy, shape)[1:, :nz]
        c0 = _broadcast(coeffs.c0, shape)[1:, :nz]

        A = cyy / grid.hy ** 2
        B = czz / grid.hz ** 2
        C = cyz / (4.0 * grid.hy * grid.hz)
        E = cy / (2.0 * grid.hy)

        I, J = np.meshgrid(np.arange(1, ny + 1), np.arange(nz), indexing="ij")
        jp = (J + 1) % nz
        jm = (J - 1) % nz
        base = (I - 1) * nz + J
        # Ghost fold: the top row's northern neighbours reflect onto row ny-1.
        up = np.where(I < ny, I + 1, ny - 1)

        rows, cols, vals = [], [], []

        def emit(r, c, v):
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(v.ravel())

        emit(base, base, -2.0 * A - 2.0 * B + c0)
        emit(base, (I - 1) * nz + jp, B)
        emit(base, (I - 1) * nz + jm, B)
        emit(base, (up - 1) * nz + J, A + E)
        emit(base, (up - 1) * nz + jp, C)
        emit(base, (up - 1) * nz + jm, -C)
        # Southern neighbours of row 1 are Dirichlet nodes and move to the
        # right-hand side; their stencil weights are kept for that purpose.
        south = I > 1
        emit(base[south], ((I - 2) * nz + J)[south], (A - E)[south])
        emit(base[south], ((I - 2) * nz + jp)[south], -C[south])
        emit(base[south], ((I - 2) * nz + jm)[south], C[south])

        n = ny * nz
        diag = np.abs(-2.0 * A - 2.0 * B + c0).ravel()
        self._row_scale = np.where(diag > 0, diag, 1.0)
        scale = 1.0 / self._row_scale
        all_rows = np.concatenate(rows)
        coo = sp.coo_matrix(
            (np.concatenate(vals) * scale[all_rows],
             (all_rows, np.concatenate(cols))), shape=(n, n))
        self._matrix = coo.tocsc()
        self._bottom_s = A[0] - E[0]
        self._bottom_c = C[0]
        self._lu = None

    @property
    def matrix(self) -> sp.csc_matrix:
        return self._matrix

    def _dirichlet_column(self, dirichlet) -> np.ndarray:
        nz = self.grid.nz
        uD = np.asarray(dirichlet, dtype=float)
        if uD.ndim == 0:
            uD = np.full(nz, float(uD))
        elif uD.shape == (nz + 1,):
            uD = uD[:nz]
        elif uD.shape != (nz,):
            raise ValueError(
                f"dirichlet data must be scalar or have {nz} (or {nz + 1}) "
                f"entries, got shape {uD.shape}")
        return uD

    def rhs(self, source, dirichlet=0.0) -> np.ndarray:
        """Right-hand side for  L u + source = 0  with the given bottom-row
        Dirichlet values."""
        ny, nz = self.grid.ny, self.grid.nz
        src = _broadcast(source, self.grid.shape)[1:, :nz]
        b = (-src).reshape(ny, nz).copy()
        uD = self._dirichlet_column(dirichlet)
        b[0] -= self._bottom_s * uD
        b[0] -= -self._bottom_c * np.roll(uD, -1)   # south-east entry
        b[0] -= self._bottom_c * np.roll(uD, 1)     # south-west entry
        return b.ravel() / self._row_scale

    def system(self, source, dirichlet=0.0) -> SparseSystem:
        return SparseSystem(matrix=self._matrix.tocsr(),
                            rhs=self.rhs(source, dirichlet),
                            grid=self.grid,
                            dirichlet=self._dirichlet_column(dirichlet),
                            row_scale=self._row_scale.copy())

    def factorize(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self._matrix, permc_spec=_PERMC_SPEC)
            except RuntimeError as exc:
                raise SolverError(f"sparse factorization failed: {exc}") from exc
        return self._lu

    def solve_vector(self, b: np.ndarray) -> np.ndarray:
        lu = self.factorize()
        x = lu.solve(b)
        x = _refine(self._matrix, lu, x, b)
        _check_residual(self._matrix, x, b)
        return x

    def solve_field(self, source, dirichlet=0.0) -> Field2D:
        uD = self._dirichlet_column(dirichlet)
        x = self.solve_vector(self.rhs(source, uD))
        return _field_from_vector(self.grid, x, uD)


def _refine(matrix, lu, x, b, sweeps: int = 2) -> np.ndarray:
    """Iterative refinement against the stored factorization.

    Strongly stretched interface geometries produce badly scaled rows; one
    or two refinement sweeps push the residual back to the fixed tolerance
    without touching the factorization.
    """
    tol = RESIDUAL_RTOL * (1.0 + float(np.linalg.norm(b)))
    for _ in range(sweeps):
        r = b - matrix @ x
        if float(np.linalg.norm(r)) <= tol:
            break
        x = x + lu.solve(r)
    return x


def _check_residual(matrix, x, b) -> None:
    if not np.all(np.isfinite(x)):
        raise SolverError("solver produced non-finite values", residual=np.inf)
    residual = float(np.linalg.norm(matrix @ x - b))
    if residual > RESIDUAL_RTOL * (1.0 + float(np.linalg.norm(b))):
        raise SolverError(
            f"residual {residual:.3e} exceeds tolerance", residual=residual)


def _field_from_vector(grid: Grid2D, x: np.ndarray, dirichlet: np.ndarray) -> Field2D:
    ny, nz = grid.ny, grid.nz
    values = np.empty(grid.shape)
    values[0, :nz] = dirichlet
    values[1:, :nz] = x.reshape(ny, nz)
    values[:, nz] = values[:, 0]
    return Field2D(grid, values)


def assemble(grid: Grid2D, coeffs: PdeCoefficients, source,
             dirichlet=0.0) -> SparseSystem:
    """Assemble  cyy u_yy + ... + c0 u + source = 0  with Dirichlet data on
    the bottom row, the ghost-closed Neumann top row, and periodic z."""
    return EllipticOperator(grid, coeffs).system(source, dirichlet)


def solve(system: SparseSystem) -> np.ndarray:
    """Direct solve of an assembled system; deterministic, residual-checked."""
    try:
        lu = spla.splu(system.matrix.tocsc(), permc_spec=_PERMC_SPEC)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(system.rhs)
    x = _refine(system.matrix, lu, x, system.rhs)
    _check_residual(system.matrix, x, system.rhs)
    return x


def solution_field(system: SparseSystem, x: np.ndarray) -> Field2D:
    """Reattach the Dirichlet row and the aliased periodic column."""
    return _field_from_vector(system.grid, x, system.dirichlet)


def trapezoid_2d(field: Field2D, z_weight=None) -> float:
    """Composite trapezoid of the field over its rectangle.

    ``z_weight`` is an optional per-column factor (callable of z or an array
    of nz+1 values); it multiplies the integrand before the z integration.
    """
    v = field.values
    if z_weight is not None:
        w = z_weight(field.grid.z) if callable(z_weight) \
            else np.asarray(z_weight, dtype=float)
        v = v * w[None, :]
    inner = np.trapezoid(v, dx=field.grid.hz, axis=1)
    return float(np.trapezoid(inner, dx=field.grid.hy))


def trapezoid_1d(values, spacing: float) -> float:
    return float(np.trapezoid(np.asarray(values, dtype=float), dx=spacing))


def one_sided_dx_at_boundary(field: Field2D, order: int = 2) -> np.ndarray:
    """Second-order one-sided normal derivative on the Dirichlet row.

    Returns (-3 u[0,:] + 4 u[1,:] - u[2,:]) / (2 hy) per column; exact for
    quadratics.
    """
    if order != 2:
        raise ValueError("only the second-order scheme is implemented")
    if field.grid.ny < 3:
        raise ValueError("need at least 4 rows for the one-sided stencil")
    v = field.values
    return (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * field.grid.hy)


@dataclass(frozen=True)
class DifferenceQuotients:
    """The nine difference quotients at one interior node."""

    d0y: float
    dmy: float
    dpy: float
    d0z: float
    dmz: float
    dpz: float
    dpdmy: float
    dpdmz: float
    d0yd0z: float


def stencil_values(field: Field2D, i: int, j: int) -> DifferenceQuotients:
    """Evaluate the difference quotients at interior node (i, j)."""
    ny, nz = field.grid.ny, field.grid.nz
    if not (1 <= i <= ny - 1 and 1 <= j <= nz - 1):
        raise ValueError(f"node ({i}, {j}) is not interior for centred forms")
    v = field.values
    hy, hz = field.grid.hy, field.grid.hz
    return DifferenceQuotients(
        d0y=(v[i + 1, j] - v[i - 1, j]) / (2 * hy),
        dmy=(v[i, j] - v[i - 1, j]) / hy,
        dpy=(v[i + 1, j] - v[i, j]) / hy,
        d0z=(v[i, j + 1] - v[i, j - 1]) / (2 * hz),
        dmz=(v[i, j] - v[i, j - 1]) / hz,
        dpz=(v[i, j + 1] - v[i, j]) / hz,
        dpdmy=(v[i + 1, j] - 2 * v[i, j] + v[i - 1, j]) / hy ** 2,
        dpdmz=(v[i, j + 1] - 2 * v[i, j] + v[i, j - 1]) / hz ** 2,
        d0yd0z=(v[i + 1, j + 1] - v[i + 1, j - 1] - v[i - 1, j + 1]
                + v[i - 1, j - 1]) / (4 * hy * hz),
    )
