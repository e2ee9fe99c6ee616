"""Anti-diffusion dynamics  df/dt + a^2 lap f = 0  on grid densities.

Transform convention: the box is extended periodically and transformed with the
unitary DFT (``norm="ortho"``); frequencies are in radians per unit length,
``s_k = 2 pi fftfreq(count, h)``.  Under this convention the zero-frequency
coefficient is ``sum(values) / sqrt(prod(counts))``, i.e. the rectangle-rule mass
divided by ``cell_volume * sqrt(prod(counts))``.

Positive time steps run in the clustering (contracting, ill-posed) direction and
multiply each coefficient by ``exp(a^2 |s|^2 dt)``; negative steps smooth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .density import DensityFrame, GaussianMixtureModel
from .errors import GridTooSmall, InconsistentVariance, InvalidTime, SpectralBlowUp

# log of the largest representable growth; beyond this we report inf
_LOG_MAX = 700.0


def frequencies(grid):
    return tuple(2 * np.pi * np.fft.fftfreq(c, d=h) for c, h in zip(grid.counts, grid.spacing))


def frequency_norm2(grid):
    s = np.meshgrid(*frequencies(grid), indexing="ij")
    return sum(si**2 for si in s)


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: object
    coeffs: np.ndarray
    time: float = 0.0

    @classmethod
    def from_frame(cls, frame):
        return cls(frame.grid, np.fft.fftn(frame.values, norm="ortho"), frame.time)

    def inverse(self):
        """Real part of the inverse transform (may contain negative values)."""
        return np.fft.ifftn(self.coeffs, norm="ortho").real

    @property
    def zero_mode(self):
        return self.coeffs.flat[0]

    def mass(self):
        """Rectangle-rule mass implied by the zero-frequency coefficient."""
        n = float(np.prod(self.grid.counts))
        return float(self.zero_mode.real) * self.grid.cell_volume * math.sqrt(n)

    def frequency_of(self, flat_index):
        idx = np.unravel_index(flat_index, self.coeffs.shape)
        return np.array([f[i] for f, i in zip(frequencies(self.grid), idx)])


def to_spectral(frame):
    return SpectralField.from_frame(frame)


@dataclass(frozen=True)
class EvolutionSpec:
    """Time window and regularization for spectral evolution.

    ``noise_floor`` marks coefficients whose magnitude relative to the zero mode
    is below it as negligible (roundoff); in the clustering direction they are
    dropped instead of amplified.
    """

    a2: float
    t_start: float
    t_end: float
    substeps: int = 1
    omega_max: float | None = None
    blowup_threshold: float = 1e6
    noise_floor: float = 1e-14

    def __post_init__(self):
        if not self.a2 > 0:
            raise ValueError("a2 must be positive")
        if int(self.substeps) < 1:
            raise ValueError("substeps must be >= 1")
        if not self.blowup_threshold > 1:
            raise ValueError("blow-up threshold must exceed 1")
        if self.omega_max is not None and not self.omega_max > 0:
            raise ValueError("omega_max must be positive")
        if self.noise_floor < 0:
            raise ValueError("noise_floor must be nonnegative")

    @property
    def dt(self):
        return self.t_end - self.t_start

    @property
    def times(self):
        return np.linspace(self.t_start, self.t_end, int(self.substeps) + 1)


@dataclass(frozen=True)
class StabilityReport:
    max_growth: float
    offending_frequency: np.ndarray | None
    blew_up: bool

    def to_dict(self):
        freq = None if self.offending_frequency is None else self.offending_frequency.tolist()
        return {"max_growth": self.max_growth, "offending_frequency": freq, "blew_up": self.blew_up}


def _retained(field_, spec, s2):
    c = np.abs(field_.coeffs)
    keep = c > spec.noise_floor * c.flat[0]
    if spec.omega_max is not None:
        keep &= s2 <= spec.omega_max**2
    return keep


def _log_growth(field_, a2, dt, s2, keep):
    """log of |c_s / c_0| (exp(a^2 s^2 dt) - 1) on retained nonzero frequencies."""
    c = np.abs(field_.coeffs)
    mask = keep & (s2 > 0)
    out = np.full(c.shape, -np.inf)
    if dt <= 0 or not mask.any():
        return out
    x = a2 * s2[mask] * dt
    # log(expm1(x)) without overflow for large x
    lg = np.where(x > 30, x, np.log(np.expm1(np.minimum(x, 30))))
    out[mask] = np.log(c[mask] / c.flat[0]) + lg
    return out


def stability_probe(frame, spec):
    """Largest relative amplification a clustering-direction step would apply.

    Growth of a retained coefficient is ``|c_s / c_0| * (exp(a^2 |s|^2 dt) - 1)``.
    """
    dt = spec.dt
    if dt <= 0:
        return StabilityReport(0.0, None, False)
    field_ = to_spectral(frame)
    s2 = frequency_norm2(frame.grid)
    keep = _retained(field_, spec, s2)
    lg = _log_growth(field_, spec.a2, dt, s2, keep)
    k = int(np.argmax(lg))
    if not np.isfinite(lg.flat[k]):
        return StabilityReport(0.0, None, False)
    growth = math.exp(lg.flat[k]) if lg.flat[k] < _LOG_MAX else math.inf
    return StabilityReport(growth, np.abs(field_.frequency_of(k)), growth > spec.blowup_threshold)


def crossover_frequency(amplitude, a2, dt, threshold=1e6):
    """Frequency above which a coefficient of relative size ``amplitude`` blows up over ``dt``."""
    if dt <= 0:
        return math.inf
    return math.sqrt(max(math.log(threshold / amplitude), 0.0) / (a2 * dt))


@dataclass
class StepInfo:
    clipped_mass: float = 0.0
    max_growth: float = 0.0
    offending_frequency: np.ndarray | None = None


def _propagate(field_, grid, spec, dt, s2, keep):
    info = StepInfo()
    if dt == 0:
        values = field_.inverse()
    elif dt < 0:
        values = np.fft.ifftn(field_.coeffs * np.exp(spec.a2 * s2 * dt), norm="ortho").real
    else:
        lg = _log_growth(field_, spec.a2, dt, s2, keep)
        k = int(np.argmax(lg))
        if np.isfinite(lg.flat[k]):
            info.max_growth = math.exp(lg.flat[k]) if lg.flat[k] < _LOG_MAX else math.inf
            info.offending_frequency = np.abs(field_.frequency_of(k))
        if info.max_growth > spec.blowup_threshold:
            raise SpectralBlowUp(
                f"growth {info.max_growth:.3g} at |s|={np.linalg.norm(info.offending_frequency):.4g} "
                f"exceeds threshold {spec.blowup_threshold:g}",
                info.max_growth,
                info.offending_frequency,
            )
        expo = np.where(keep, spec.a2 * s2 * dt, 0.0)
        values = np.fft.ifftn(np.where(keep, field_.coeffs * np.exp(expo), 0.0), norm="ortho").real
    neg = values < 0
    if neg.any():
        info.clipped_mass = -grid.integrate(np.where(neg, values, 0.0))
        values = np.where(neg, 0.0, values)
    return values, info


def spectral_propagate(frame, spec):
    """Frame at ``spec.t_end`` obtained with the exact spectral multiplier."""
    frame_, _ = propagate_with_info(frame, spec)
    return frame_


def propagate_with_info(frame, spec):
    field_ = to_spectral(frame)
    s2 = frequency_norm2(frame.grid)
    keep = _retained(field_, spec, s2)
    values, info = _propagate(field_, frame.grid, spec, spec.dt, s2, keep)
    return DensityFrame.from_values(frame.grid, values, spec.t_end), info


@dataclass
class EvolutionReport:
    t_grid: list = field(default_factory=list)
    mass_clipped: list = field(default_factory=list)
    max_growth: list = field(default_factory=list)
    blew_up: bool = False
    offending_frequency: list | None = None

    def to_dict(self):
        return {
            "t_grid": list(self.t_grid),
            "mass_clipped": list(self.mass_clipped),
            "max_growth": list(self.max_growth),
            "blew_up": self.blew_up,
            "offending_frequency": self.offending_frequency,
        }


def evolve(frame, spec, raise_on_blowup=True):
    """Frames at every stamp of ``spec.times``, each computed from ``frame`` exactly.

    With ``raise_on_blowup=False`` the run stops at the first stamp that blows up
    and the report records it.
    """
    field_ = to_spectral(frame)
    s2 = frequency_norm2(frame.grid)
    keep = _retained(field_, spec, s2)
    frames, report = [], EvolutionReport()
    for t in spec.times:
        try:
            values, info = _propagate(field_, frame.grid, spec, float(t) - spec.t_start, s2, keep)
        except SpectralBlowUp as exc:
            if raise_on_blowup:
                raise
            report.blew_up = True
            report.offending_frequency = np.asarray(exc.frequency).tolist()
            report.t_grid.append(float(t))
            report.mass_clipped.append(math.nan)
            report.max_growth.append(exc.growth)
            break
        frames.append(DensityFrame.from_values(frame.grid, values, float(t)))
        report.t_grid.append(float(t))
        report.mass_clipped.append(info.clipped_mass)
        report.max_growth.append(info.max_growth)
    return frames, report


# --------------------------------------------------------------------------
# closed forms


def gaussian_kernel_1d(offsets, variance):
    return np.exp(-(offsets**2) / (2 * variance)) / math.sqrt(2 * math.pi * variance)


def _axis_operator(axis_nodes, h, variance):
    """Trapezoid convolution matrix for one axis, normalized by the infinite-lattice kernel sum."""
    c = len(axis_nodes)
    w = np.full(c, h)
    w[0] = w[-1] = h / 2
    diff = axis_nodes[:, None] - axis_nodes[None, :]
    k = np.arange(-(c - 1), c) * h
    lattice = h * gaussian_kernel_1d(k, variance).sum()
    return gaussian_kernel_1d(diff, variance) * w[None, :] / lattice


def gaussian_smooth(values, grid, variance):
    """Direct-quadrature convolution of grid ``values`` with an isotropic Gaussian."""
    out = np.asarray(values, float)
    for axis, (nodes, h) in enumerate(zip(grid.axes, grid.spacing)):
        op = _axis_operator(nodes, h, variance)
        out = np.moveaxis(np.tensordot(op, out, axes=([1], [axis])), 0, axis)
    return out


def heat_kernel_solution(initial, a2, t):
    """State at clustering time ``t <= 0`` reconstructed from the t = 0 profile.

    Convolves ``initial`` with the Gaussian of variance ``2 a^2 (-t)`` by grid
    quadrature.  Raises GridTooSmall when more than 1e-6 of the mass leaves the box.
    """
    if t > 0:
        raise InvalidTime(f"closed-form solution only holds for t <= 0, got {t}")
    if t == 0:
        return initial.with_time(initial.time)
    values = gaussian_smooth(initial.values, initial.grid, 2 * a2 * (-t))
    mass = initial.grid.integrate(values)
    if abs(mass - 1.0) > 1e-6:
        raise GridTooSmall(f"heat-kernel solution lost mass: {mass!r}")
    return DensityFrame.from_values(initial.grid, np.maximum(values, 0.0), initial.time + t)


@dataclass(frozen=True, eq=False)
class DegenerateMixture:
    """Delta limit of the self-similar mixture family at t = 0."""

    weights: np.ndarray
    means: np.ndarray
    variance: float = 0.0
    degenerate = True


def mixture_evolution(model, a2, t0, t1, tol=1e-9):
    """Move a mixture on the family sigma^2 = 2 a^2 (-t) from ``t0`` to ``t1``."""
    if not t0 < 0:
        raise InvalidTime("t0 must be negative")
    if not t0 <= t1 <= 0:
        raise InvalidTime("need t0 <= t1 <= 0")
    if abs(model.variance - 2 * a2 * (-t0)) > tol:
        raise InconsistentVariance(
            f"variance {model.variance!r} is not 2 a^2 (-t0) = {2 * a2 * (-t0)!r}"
        )
    if t1 == t0:
        return model
    if t1 == 0:
        return DegenerateMixture(model.weights, model.means)
    return GaussianMixtureModel(model.weights, model.means, 2 * a2 * (-t1))


# --------------------------------------------------------------------------
# residuals


def laplacian(values, grid):
    """Second central differences; border nodes are NaN."""
    v = np.asarray(values, float)
    out = np.zeros_like(v)
    for axis, h in enumerate(grid.spacing):
        out += (np.roll(v, -1, axis) - 2 * v + np.roll(v, 1, axis)) / (h * h)
    interior = np.zeros(v.shape, bool)
    interior[tuple(slice(1, -1) for _ in range(v.ndim))] = True
    out[~interior] = np.nan
    return out


def pde_residual(prev, mid, nxt, dt, a2, grid, source=None):
    """Residual of  df/dt + a^2 lap f - source  at the middle time by central differences.

    ``prev``/``mid``/``nxt`` are value arrays at t - dt, t, t + dt.  Returns the
    residual field (NaN on the border) and its interior sup-norm.
    """
    r = (np.asarray(nxt) - np.asarray(prev)) / (2 * dt) + a2 * laplacian(mid, grid)
    if source is not None:
        r = r - source
    return r, float(np.nanmax(np.abs(r)))
