"""Perturbation expansion of the forward model in the roughness size.

Writing eps = hbar / d, the solution over the unperturbed strip
D0 = (0, d) x (0, L) expands as w0 + eps*w1 + eps**2*w2 + ..., where every
term solves the same screened operator  sigma**2 Lap - 1  with reflecting
top, periodic z, and Dirichlet data at x = 0 fed by normal derivatives of
the lower orders (htilde is the unit-amplitude interface series):

    w0:   sigma**2 Lap w0 - w0 + G(d - x) = 0,        w0(0, z) = 0
    w1:   homogeneous,   w1(0, z) = -d htilde(z) dx w0(0, z)
    w2:   homogeneous,   w2(0, z) = -d htilde(z) dx w1(0, z)
                                    + (d htilde(z))**2 G(d) / (2 sigma**2)

The w2 datum uses dxx w0(0, z) = -G(d) / sigma**2, obtained by evaluating
w0's own equation on the boundary, so only first normal derivatives are
ever discretized (with the second-order one-sided scheme).  Orders n >= 3
follow the same recursion -- the order-n datum couples h**k / k! to the
k-th normal derivatives of order n-k -- but the per-order solve count grows
like K**n, so they are not implemented.

Because htilde is a K-term sine series with random weights, w1 and w2 split
by linearity into per-mode solutions w1_k and w2_jk, giving the
photoluminescence approximants

    I0 = i0
    I1 = i0 + eps sum_k lam_k th_k i1_k
    I2 = I1 + eps**2 sum_jk lam_j lam_k th_j th_k (i2_jk + b_jk)

with i_* the (1/L)-normalized strip integrals of the basis fields and b_jk
the boundary line integrals (d**2 / 2L) int phi_j phi_k dx w0(0, z) dz that
account for the strip/true-domain mismatch.  Taking coefficient moments in
place of the th products yields the expected photoluminescence.

All basis problems share one operator matrix, so a full basis costs one
factorization plus 1 + K + K(K+1)/2 triangular solves.  Only the upper
triangle of w2 is solved, on the symmetrized datum; the th_j th_k (and
moment) weighting is symmetric, so nothing is lost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import interface as iface
from .fd_core import (EllipticOperator, Field2D, Grid2D, PdeCoefficients,
                      one_sided_dx_at_boundary, trapezoid_1d, trapezoid_2d)
from .forward_mapped import DeviceConfig

__all__ = [
    "AsymptoticBasis",
    "PLApproximant",
    "expansion_grid",
    "base_operator",
    "solve_w0",
    "solve_w1k",
    "solve_w2jk",
    "build_basis",
    "assemble_approximant",
    "expected_pl",
    "sampled_pl",
    "mode_shape",
]


def expansion_grid(device: DeviceConfig, nx: int = 64, nz: int = 64) -> Grid2D:
    """Grid over the unperturbed strip; first axis is depth x in (0, d)."""
    return Grid2D.rect(nx, nz, device.d, device.L)


def base_operator(device: DeviceConfig, grid: Grid2D) -> EllipticOperator:
    """The shared screened operator sigma**2 Lap - 1 on the strip."""
    sig2 = device.sigma ** 2
    return EllipticOperator(grid, PdeCoefficients(cyy=sig2, czz=sig2, c0=-1.0))


def mode_shape(k: int, L: float, z: np.ndarray) -> np.ndarray:
    """Interface mode phi_k(z) = sin(2 pi k z / L)."""
    return np.sin(2.0 * np.pi * k * z / L)


def solve_w0(device: DeviceConfig, grid: Grid2D,
             operator: EllipticOperator | None = None) -> Field2D:
    """Leading-order solve; z-constant in exact arithmetic since the
    generation profile depends on depth only (solved in 2D regardless)."""
    op = operator or base_operator(device, grid)
    source = device.generation(device.d - grid.y)[:, None]
    return op.solve_field(source, 0.0)


def solve_w1k(device: DeviceConfig, grid: Grid2D, k: int, w0: Field2D,
              operator: EllipticOperator | None = None) -> Field2D:
    """First-order mode solve with datum -d phi_k dx w0(0, .)."""
    op = operator or base_operator(device, grid)
    dx_w0 = one_sided_dx_at_boundary(w0)
    datum = -device.d * mode_shape(k, device.L, grid.z) * dx_w0
    return op.solve_field(0.0, datum)


def solve_w2jk(device: DeviceConfig, grid: Grid2D, j: int, k: int,
               w1j: Field2D, w1k: Field2D,
               operator: EllipticOperator | None = None) -> Field2D:
    """Second-order mode solve on the symmetrized (j, k) datum.

    The raw data for (j, k) and (k, j) differ termwise, but only their
    symmetric part survives the th_j th_k weighting, so the mean of the two
    is solved once per unordered pair.
    """
    op = operator or base_operator(device, grid)
    z = grid.z
    phi_j = mode_shape(j, device.L, z)
    phi_k = mode_shape(k, device.L, z)
    dx_j = one_sided_dx_at_boundary(w1j)
    dx_k = one_sided_dx_at_boundary(w1k)
    g_top = device.generation(device.d)
    datum = (-0.5 * device.d * (phi_j * dx_k + phi_k * dx_j)
             + device.d ** 2 * g_top / (2.0 * device.sigma ** 2) * phi_j * phi_k)
    return op.solve_field(0.0, datum)


@dataclass
class AsymptoticBasis:
    """All basis fields of one (device, interface-model) pair.

    ``w2`` maps unordered index pairs (j, k), j <= k (1-based), to the
    symmetrized second-order fields.  ``solve_count`` records the number of
    boundary value problems solved: 1 + K + K(K+1)/2.
    """

    device: DeviceConfig
    model: iface.InterfaceModel
    grid: Grid2D
    w0: Field2D
    w1: list[Field2D]
    w2: dict[tuple[int, int], Field2D]
    dx_w0: np.ndarray
    dx_w1: list[np.ndarray]
    solve_count: int


def build_basis(device: DeviceConfig, model: iface.InterfaceModel,
                grid: Grid2D | None = None, nx: int = 64, nz: int = 64
                ) -> AsymptoticBasis:
    """Solve the full order-2 basis with one shared factorization."""
    if not np.isclose(model.L, device.L, rtol=1e-12):
        raise ValueError(
            f"interface period {model.L} does not match device period {device.L}")
    grid = grid or expansion_grid(device, nx, nz)
    op = base_operator(device, grid)

    w0 = solve_w0(device, grid, op)
    count = 1
    w1 = []
    for k in range(1, model.K + 1):
        w1.append(solve_w1k(device, grid, k, w0, op))
        count += 1
    w2 = {}
    for j in range(1, model.K + 1):
        for k in range(j, model.K + 1):
            w2[(j, k)] = solve_w2jk(device, grid, j, k, w1[j - 1], w1[k - 1], op)
            count += 1
    return AsymptoticBasis(
        device=device, model=model, grid=grid, w0=w0, w1=w1, w2=w2,
        dx_w0=one_sided_dx_at_boundary(w0),
        dx_w1=[one_sided_dx_at_boundary(f) for f in w1],
        solve_count=count)


@dataclass(frozen=True)
class PLApproximant:
    """Photoluminescence expansion coefficients of one basis.

    ``i1[k-1]`` and ``i2[j-1, k-1]`` are the strip integrals of w1_k and
    w2_jk; ``boundary`` holds the line-integral corrections b_jk.  The mode
    weights lam_k are kept so callers only supply coefficient draws or
    moments.
    """

    i0: float
    i1: np.ndarray
    i2: np.ndarray
    boundary: np.ndarray
    lambdas: np.ndarray
    epsilon: float

    def __post_init__(self):
        if not self.i0 > 0:
            raise ValueError(f"leading PL term must be positive, got {self.i0}")
        if not np.allclose(self.i2, self.i2.T, rtol=0, atol=1e-12 * (1 + np.abs(self.i2).max())):
            raise ValueError("second-order coefficients must be symmetric")


def assemble_approximant(basis: AsymptoticBasis,
                         epsilon: float | None = None) -> PLApproximant:
    """Integrate the basis fields into expansion coefficients.

    ``epsilon`` defaults to hbar / d of the basis model; passing it
    explicitly lets one basis serve a whole sweep of roughness sizes (the
    fields do not depend on eps).
    """
    device, model, grid = basis.device, basis.model, basis.grid
    K = model.K
    L = device.L
    if epsilon is None:
        epsilon = device.epsilon(model.hbar)

    def strip_integral(f: Field2D) -> float:
        return trapezoid_2d(f) / L

    i0 = strip_integral(basis.w0)
    i1 = np.array([strip_integral(f) for f in basis.w1])
    i2 = np.zeros((K, K))
    for (j, k), f in basis.w2.items():
        i2[j - 1, k - 1] = i2[k - 1, j - 1] = strip_integral(f)

    phis = np.stack([mode_shape(k, L, grid.z) for k in range(1, K + 1)])
    boundary = np.empty((K, K))
    pref = device.d ** 2 / (2.0 * L)
    for j in range(K):
        for k in range(j, K):
            val = pref * trapezoid_1d(phis[j] * phis[k] * basis.dx_w0, grid.hz)
            boundary[j, k] = boundary[k, j] = val

    return PLApproximant(i0=i0, i1=i1, i2=i2, boundary=boundary,
                         lambdas=np.asarray(model.lambdas), epsilon=epsilon)


def _check_order(order: int) -> None:
    if order not in (0, 1, 2):
        raise ValueError(
            f"expansion order must be 0, 1 or 2 (got {order}); higher orders "
            "are not supported")


def expected_pl(approximant: PLApproximant, moments: iface.ThetaMoments,
                order: int) -> float:
    """Expected photoluminescence at the given expansion order."""
    _check_order(order)
    total = approximant.i0
    if order >= 1:
        total = total + approximant.epsilon * moments.mean * float(
            approximant.lambdas @ approximant.i1)
    if order == 2:
        K = approximant.lambdas.size
        mom = np.full((K, K), moments.cross)
        np.fill_diagonal(mom, moments.second)
        lam2 = np.outer(approximant.lambdas, approximant.lambdas)
        total = total + approximant.epsilon ** 2 * float(
            np.sum(lam2 * mom * (approximant.i2 + approximant.boundary)))
    return float(total)


def sampled_pl(approximant: PLApproximant,
               sample: iface.InterfaceSample | np.ndarray,
               order: int) -> float:
    """Pathwise approximant for one coefficient draw."""
    _check_order(order)
    thetas = sample.as_array() if isinstance(sample, iface.InterfaceSample) \
        else np.asarray(sample, dtype=float)
    if thetas.shape != approximant.lambdas.shape:
        raise ValueError("coefficient draw does not match the mode count")
    c = approximant.lambdas * thetas
    total = approximant.i0
    if order >= 1:
        total = total + approximant.epsilon * float(c @ approximant.i1)
    if order == 2:
        total = total + approximant.epsilon ** 2 * float(
            c @ (approximant.i2 + approximant.boundary) @ c)
    return float(total)
