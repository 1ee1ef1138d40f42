"""Per-sample forward solves of the exciton diffusion model.

The device occupies the strip between the rough absorbing interface
x = h(z) and the reflecting top surface x = d.  Flattening the strip onto
the unit square with y = (x - h) / (d - h), z -> z / L turns the constant-
coefficient problem

    sigma**2 (u_xx + u_zz) - u + G(d - x) = 0

into a variable-coefficient one,

    sigma**2 * Lh u - u + G((1 - y)(d - h)) = 0,

    Lh = ((1-y)**2 h'**2 + 1) / (d-h)**2 * d_yy  +  1/L**2 * d_zz
         - 2 (1-y) h' / (L (d-h)) * d_yz
         - (2 (1-y) h'**2 / (d-h)**2 + (1-y) h'' / (d-h)) * d_y,

with u(0, z) = 0, u_y(1, z) = 0 and periodic z.  The photoluminescence is
the thickness-weighted average

    I = integral over the unit square of u(y, z) (d - h(z)) dy dz,

where the 1/L normalization of the physical-domain definition has been
absorbed by the z rescaling.

For a flat interface h = xi the problem drops to one dimension; the solver
for that case shares the conventions (and its matrix is reused by the
sensitivity solves in :mod:`exdil.inverse`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from . import interface as iface
from .fd_core import (EllipticOperator, Field2D, Grid2D, PdeCoefficients,
                      SolverError, trapezoid_2d)

__all__ = [
    "GenerationProfile",
    "DeviceConfig",
    "MappedSolution",
    "Solution1D",
    "DomainValidityError",
    "solve_mapped_2d",
    "solve_mapped_profile",
    "solve_mapped_1d",
    "pl_of_sample",
]


class DomainValidityError(ValueError):
    """The interface touches or crosses the top surface."""


@dataclass(frozen=True)
class GenerationProfile:
    """Exciton generation density G(x) = offset + sum_m a_m exp(-x / ell_m).

    Positive and non-increasing by construction.  ``terms`` holds
    (amplitude, decay length) pairs; a bare constant profile has no terms.
    """

    terms: tuple[tuple[float, float], ...] = ()
    offset: float = 0.0

    def __post_init__(self):
        terms = tuple((float(a), float(ell)) for a, ell in self.terms)
        if self.offset < 0:
            raise ValueError("constant part must be nonnegative")
        for a, ell in terms:
            if a <= 0 or ell <= 0:
                raise ValueError("amplitudes and decay lengths must be positive")
        if self.offset == 0 and not terms:
            raise ValueError("generation profile vanishes identically")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def exponential(cls, decay: float, amplitude: float = 1.0) -> "GenerationProfile":
        return cls(terms=((amplitude, decay),))

    @classmethod
    def constant(cls, value: float) -> "GenerationProfile":
        return cls(offset=value)

    @classmethod
    def exp_sum(cls, terms) -> "GenerationProfile":
        return cls(terms=tuple(terms))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, self.offset)
        for a, ell in self.terms:
            out = out + a * np.exp(-x / ell)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DeviceConfig:
    """One device instance: diffusion length, thickness, period, generation."""

    sigma: float
    d: float
    L: float
    generation: GenerationProfile

    def __post_init__(self):
        if self.sigma <= 0 or self.d <= 0 or self.L <= 0:
            raise ValueError("sigma, d and L must be positive")

    def epsilon(self, hbar: float) -> float:
        """Perturbation size hbar / d of a roughness amplitude hbar."""
        return hbar / self.d


@dataclass
class MappedSolution:
    """Unit-square solution of one interface realization plus its PL value."""

    field: Field2D
    pl: float
    device: DeviceConfig
    sample: Optional[iface.InterfaceSample]
    profile: np.ndarray          # interface heights per z column
    operator: EllipticOperator   # kept for sensitivity solves

    def __post_init__(self):
        if not self.pl > 0:
            raise SolverError(f"nonpositive photoluminescence {self.pl}")


@dataclass
class Solution1D:
    """Flat-interface solution on the unit interval."""

    y: np.ndarray
    values: np.ndarray
    pl: float
    device: DeviceConfig
    xi: float


def solve_mapped_profile(device: DeviceConfig, grid: Grid2D, h, hp, hpp,
                         sample: Optional[iface.InterfaceSample] = None
                         ) -> MappedSolution:
    """Solve for an explicit interface profile.

    ``h``, ``hp``, ``hpp`` are the interface height and its first two
    physical-z derivatives per grid column (scalars broadcast).  This is the
    workhorse behind :func:`solve_mapped_2d` and lets tests and callers use
    profiles outside the sine model (e.g. a constant offset).
    """
    nz = grid.nz
    h = np.broadcast_to(np.asarray(h, dtype=float), (nz + 1,))
    hp = np.broadcast_to(np.asarray(hp, dtype=float), (nz + 1,))
    hpp = np.broadcast_to(np.asarray(hpp, dtype=float), (nz + 1,))

    dmh = device.d - h
    if np.any(dmh <= 0):
        raise DomainValidityError(
            f"interface reaches the top surface: max h = {h.max():.6g} "
            f">= d = {device.d:.6g}")

    sig2 = device.sigma ** 2
    one_my = (1.0 - grid.y)[:, None]
    hp_r = hp[None, :]
    hpp_r = hpp[None, :]
    dmh_r = dmh[None, :]

    coeffs = PdeCoefficients(
        cyy=sig2 * ((one_my * hp_r) ** 2 + 1.0) / dmh_r ** 2,
        czz=sig2 / device.L ** 2,
        cyz=-2.0 * sig2 * one_my * hp_r / (device.L * dmh_r),
        cy=-sig2 * one_my * (2.0 * hp_r ** 2 / dmh_r ** 2 + hpp_r / dmh_r),
        c0=-1.0,
    )
    source = device.generation(one_my * dmh_r)

    op = EllipticOperator(grid, coeffs)
    field = op.solve_field(source, 0.0)
    pl = trapezoid_2d(field, z_weight=dmh)
    return MappedSolution(field=field, pl=pl, device=device, sample=sample,
                          profile=h, operator=op)


def solve_mapped_2d(device: DeviceConfig, model: iface.InterfaceModel,
                    sample: iface.InterfaceSample, grid: Grid2D
                    ) -> MappedSolution:
    """Solve one realization of the sine-series interface."""
    if not np.isclose(model.L, device.L, rtol=1e-12):
        raise ValueError(
            f"interface period {model.L} does not match device period {device.L}")
    z_phys = device.L * grid.z
    h = iface.evaluate(model, sample, z_phys)
    hp = iface.evaluate_dz(model, sample, z_phys)
    hpp = iface.evaluate_dzz(model, sample, z_phys)
    return solve_mapped_profile(device, grid, h, hp, hpp, sample=sample)


def pl_of_sample(device: DeviceConfig, model: iface.InterfaceModel,
                 sample: iface.InterfaceSample, grid: Grid2D) -> float:
    """Photoluminescence of one interface realization."""
    return solve_mapped_2d(device, model, sample, grid).pl


def _banded_1d(device: DeviceConfig, xi: float, cells: int):
    """Tridiagonal operator of the flat-interface problem in banded form.

    Rows follow the 2D conventions: Dirichlet node eliminated at y = 0,
    ghost-closed Neumann at y = 1, unknowns i = 1..cells.
    """
    width = device.d - xi
    hy = 1.0 / cells
    c = device.sigma ** 2 / (width * hy) ** 2
    n = cells
    ab = np.zeros((3, n))
    ab[0, 1:] = c                      # superdiagonal
    ab[1, :] = -2.0 * c - 1.0          # diagonal
    ab[2, :-1] = c                     # subdiagonal
    ab[2, n - 2] = 2.0 * c             # Neumann fold on the last row
    return ab, hy, width


def solve_1d_rhs(device: DeviceConfig, xi: float, cells: int,
                 source: np.ndarray) -> np.ndarray:
    """Solve  sigma**2 u_yy / (d-xi)**2 - u + source = 0  on the unit
    interval with u(0) = 0 and u'(1) = 0; ``source`` holds node values
    (cells+1 entries).  Returns all node values including the boundary."""
    ab, _, _ = _banded_1d(device, xi, cells)
    x = solve_banded((1, 1), ab, -np.asarray(source, dtype=float)[1:])
    if not np.all(np.isfinite(x)):
        raise SolverError("1d solve produced non-finite values")
    return np.concatenate(([0.0], x))


def solve_mapped_1d(device: DeviceConfig,
                    offset: iface.Interface1D | float = 0.0,
                    cells: int = 512) -> Solution1D:
    """Flat-interface forward solve; PL = (d - xi) * integral of u dy."""
    xi = offset.xi if isinstance(offset, iface.Interface1D) else float(offset)
    if xi >= device.d:
        raise DomainValidityError(f"offset {xi} is not below the top surface")
    _, hy, width = _banded_1d(device, xi, cells)
    y = np.arange(cells + 1) * hy
    g = device.generation((1.0 - y) * width)
    u = solve_1d_rhs(device, xi, cells, g)
    pl = width * float(np.trapezoid(u, dx=hy))
    return Solution1D(y=y, values=u, pl=pl, device=device, xi=xi)
