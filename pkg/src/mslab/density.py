"""Grid densities, Gaussian mixtures, particle ensembles and kernel estimates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import DimensionMismatch, GridTooSmall, ParseError

MASS_TOL = 1e-6
COVERAGE_SIGMAS = 6.0
MIN_POINTS_PER_AXIS = 8


def _as_tuple_pairs(extents):
    arr = np.asarray(extents, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, 2)
    return tuple((float(lo), float(hi)) for lo, hi in arr)


@dataclass(frozen=True)
class DomainGrid:
    """Regular tensor-product grid including both endpoints of every axis."""

    extents: tuple
    counts: tuple

    def __post_init__(self):
        extents = _as_tuple_pairs(self.extents)
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if len(extents) != len(counts):
            raise ValueError("extents and counts disagree on the dimension")
        for (lo, hi), c in zip(extents, counts):
            if not lo < hi:
                raise ValueError(f"empty axis extent [{lo}, {hi}]")
            if c < MIN_POINTS_PER_AXIS:
                raise ValueError(f"need at least {MIN_POINTS_PER_AXIS} points per axis, got {c}")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def uniform(cls, lo, hi, count, ndim=1):
        return cls(((lo, hi),) * ndim, (count,) * ndim)

    @property
    def ndim(self):
        return len(self.counts)

    @property
    def shape(self):
        return self.counts

    @property
    def spacing(self):
        return tuple((hi - lo) / (c - 1) for (lo, hi), c in zip(self.extents, self.counts))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @cached_property
    def axes(self):
        return tuple(np.linspace(lo, hi, c) for (lo, hi), c in zip(self.extents, self.counts))

    def mesh(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def points(self):
        """All nodes as an ``(M, n)`` array in row-major order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    @cached_property
    def weights(self):
        """Trapezoidal quadrature weights on the nodes."""
        w = np.ones(self.shape)
        for axis, (h, c) in enumerate(zip(self.spacing, self.counts)):
            wa = np.full(c, h)
            wa[0] = wa[-1] = h / 2
            shape = [1] * self.ndim
            shape[axis] = c
            w = w * wa.reshape(shape)
        return w

    def integrate(self, values):
        return float(np.sum(self.weights * values))

    def nearest_index(self, point):
        point = np.atleast_1d(np.asarray(point, float))
        idx = []
        for x, (lo, _), h, c in zip(point, self.extents, self.spacing, self.counts):
            idx.append(int(np.clip(round((x - lo) / h), 0, c - 1)))
        return tuple(idx)

    def node(self, index):
        return np.array([ax[i] for ax, i in zip(self.axes, index)])

    def covers(self, lo, hi):
        """True when the box ``[lo, hi]`` (per axis) lies inside the grid extent."""
        lo = np.broadcast_to(np.asarray(lo, float), (self.ndim,))
        hi = np.broadcast_to(np.asarray(hi, float), (self.ndim,))
        return all(elo <= a and b <= ehi for (elo, ehi), a, b in zip(self.extents, lo, hi))

    def to_dict(self):
        return {"dims": self.ndim, "extents": [list(e) for e in self.extents], "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d):
        grid = cls(d["extents"], d["counts"])
        if "dims" in d and int(d["dims"]) != grid.ndim:
            raise ValueError("grid 'dims' disagrees with extents")
        return grid


@dataclass(frozen=True, eq=False)
class DensityFrame:
    """A probability density sampled on a grid at one clustering time."""

    grid: DomainGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")
        if values.min() < 0:
            raise ValueError("density values must be nonnegative")
        mass = self.grid.integrate(values)
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError(f"frame mass {mass!r} is not 1 within {MASS_TOL}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "time", float(self.time))

    @classmethod
    def from_values(cls, grid, values, time=0.0):
        """Build a frame from nonnegative values, renormalizing to unit mass."""
        values = np.array(values, dtype=float).reshape(grid.shape)
        mass = grid.integrate(values)
        if not mass > 0:
            raise ValueError("cannot normalize a density with zero mass")
        return cls(grid, values / mass, time)

    @property
    def mass(self):
        return self.grid.integrate(self.values)

    def mean(self):
        return np.array([self.grid.integrate(m * self.values) for m in self.grid.mesh()])

    def variance(self):
        """Per-axis second central moments."""
        mu = self.mean()
        return np.array(
            [self.grid.integrate((m - c) ** 2 * self.values) for m, c in zip(self.grid.mesh(), mu)]
        )

    def with_time(self, time):
        return DensityFrame(self.grid, self.values, time)

    def to_dict(self):
        return {"grid": self.grid.to_dict(), "time": self.time, "values": self.values.ravel().tolist()}

    @classmethod
    def from_dict(cls, d):
        grid = DomainGrid.from_dict(d["grid"])
        return cls(grid, np.asarray(d["values"], float).reshape(grid.shape), d.get("time", 0.0))


def save_frame_json(frame, path):
    Path(path).write_text(json.dumps(frame.to_dict()))


def load_frame_json(path):
    return DensityFrame.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# Gaussian mixtures


@dataclass(frozen=True, eq=False)
class GaussianMixtureModel:
    """Isotropic Gaussian mixture with a variance shared by all components."""

    weights: np.ndarray
    means: np.ndarray
    variance: float

    degenerate = False

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, float))
        mu = np.asarray(self.means, float)
        if mu.ndim == 0:
            mu = mu.reshape(1, 1)
        elif mu.ndim == 1:
            # a flat list is one 1-D mean per component
            mu = mu.reshape(-1, 1) if len(w) == len(mu) else mu.reshape(1, -1)
        if mu.shape[0] != w.shape[0]:
            raise ValueError("need one mean per weight")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if not self.variance > 0:
            raise ValueError("mixture variance must be positive")
        w.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def ndim(self):
        return self.means.shape[1]

    @property
    def sigma(self):
        return math.sqrt(self.variance)

    def evaluate(self, points):
        """Density at an ``(M, n)`` array of points."""
        pts = np.asarray(points, float).reshape(-1, self.ndim)
        out = np.zeros(pts.shape[0])
        norm = (2 * math.pi * self.variance) ** (-self.ndim / 2)
        for lam, mu in zip(self.weights, self.means):
            r2 = ((pts - mu) ** 2).sum(axis=1)
            out += lam * norm * np.exp(-r2 / (2 * self.variance))
        return out


def gmm_eval(model, x):
    return float(model.evaluate(np.atleast_1d(np.asarray(x, float)))[0])


def gmm_rasterize(model, grid, t=0.0):
    """Sample ``model`` on ``grid`` and renormalize to unit mass.

    Raises GridTooSmall unless every mean +/- 6 sigma lies inside the grid.
    """
    if grid.ndim != model.ndim:
        raise ValueError("grid and model dimensions differ")
    reach = COVERAGE_SIGMAS * model.sigma
    for mu in model.means:
        if not grid.covers(mu - reach, mu + reach):
            raise GridTooSmall(f"grid does not cover mean {mu.tolist()} +/- {COVERAGE_SIGMAS} sigma")
    values = model.evaluate(grid.points()).reshape(grid.shape)
    return DensityFrame.from_values(grid, values, t)


def delta_surrogate(means, grid, weights=None, sigma_min=0.0):
    """Narrow Gaussian mixture standing in for point masses at ``means``.

    The variance is ``max(2 h^2, sigma_min^2)`` with ``h`` the coarsest grid spacing.
    """
    means = np.asarray(means, float).reshape(-1, grid.ndim)
    if weights is None:
        weights = np.full(len(means), 1.0 / len(means))
    h = max(grid.spacing)
    return GaussianMixtureModel(weights, means, max(2 * h * h, sigma_min**2))


# --------------------------------------------------------------------------
# particles and kernel estimates


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    positions: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos.reshape(-1, 1)
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("an ensemble needs at least one point")
        if not np.all(np.isfinite(pos)):
            raise ValueError("particle coordinates must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def size(self):
        return self.positions.shape[0]

    @property
    def ndim(self):
        return self.positions.shape[1]

    @classmethod
    def sample(cls, model, size, seed=None):
        """Draw ``size`` points from a Gaussian mixture."""
        rng = np.random.default_rng(seed)
        comp = rng.choice(len(model.weights), size=size, p=model.weights)
        pos = model.means[comp] + model.sigma * rng.standard_normal((size, model.ndim))
        return cls(pos, seed)


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Kernel choice for density estimates and mean-shift maps.

    ``bandwidth`` is the gaussian standard deviation or the flat-ball radius;
    ``None`` selects the normal-reference rule where a rule applies.
    """

    kind: str = "gaussian"
    bandwidth: float | None = None
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        kernels.kind_code(self.kind)
        if self.bandwidth is not None:
            bw = np.asarray(self.bandwidth, float)
            if np.any(bw <= 0):
                raise ValueError("kernel bandwidth must be positive")
        if self.weights is not None:
            w = np.array(self.weights, float)
            if np.any(w < 0) or not np.any(w > 0):
                raise ValueError("kernel weights must be nonnegative and not all zero")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def sample_weights(self, n):
        if self.weights is None:
            return np.ones(n)
        if self.weights.shape != (n,):
            raise ValueError(f"expected {n} sample weights, got {self.weights.shape}")
        return self.weights


def normal_reference_bandwidth(positions):
    """Per-axis 1.06 * std * N^(-1/5)."""
    pos = np.asarray(positions, float)
    pos = pos.reshape(pos.shape[0], -1)
    std = pos.std(axis=0, ddof=1) if pos.shape[0] > 1 else np.zeros(pos.shape[1])
    if np.any(std <= 0):
        raise ValueError("normal-reference rule needs a nonzero sample spread; pass a bandwidth")
    return 1.06 * std * pos.shape[0] ** (-0.2)


def kde_estimate(particles, kernel, grid, t=0.0):
    """Kernel density estimate of ``particles`` on ``grid``, unit mass."""
    if particles.ndim != grid.ndim:
        raise ValueError("particle and grid dimensions differ")
    bw = kernel.bandwidth
    if bw is None:
        bw = normal_reference_bandwidth(particles.positions)
    bw = np.broadcast_to(np.asarray(bw, float), (grid.ndim,))
    code = kernels.kind_code(kernel.kind)
    reach = COVERAGE_SIGMAS * bw if code == kernels.GAUSSIAN else np.full(grid.ndim, bw[0])
    pos = particles.positions
    if not grid.covers(pos.min(axis=0) - reach, pos.max(axis=0) + reach):
        raise GridTooSmall("grid does not cover the particles plus kernel reach")
    w = kernel.sample_weights(particles.size)
    values = kernels.kde_sum(grid.points(), pos, w, bw, code).reshape(grid.shape)
    return DensityFrame.from_values(grid, values, t)


def density_gradient(frame):
    """Per-axis gradient components: central differences inside, one-sided (2nd order) at edges."""
    g = np.gradient(frame.values, *frame.grid.spacing, edge_order=2)
    return tuple(g) if isinstance(g, (list, tuple)) else (g,)


def frame_modes(frame, rel_height=1e-3):
    """Grid nodes that are local maxima above ``rel_height * max``, highest first."""
    v = frame.values
    peak = ndimage.maximum_filter(v, size=3, mode="constant", cval=-np.inf) == v
    peak &= v > rel_height * v.max()
    idx = np.argwhere(peak)
    order = np.argsort(-v[tuple(idx.T)], kind="stable")
    return [frame.grid.node(tuple(i)) for i in idx[order]]


def mode_masses(frame, modes):
    """Mass of each mode's nearest-mode (Voronoi) cell."""
    modes = np.asarray(modes, float).reshape(len(modes), -1)
    pts = frame.grid.points()
    owner = np.argmin(((pts[:, None, :] - modes[None, :, :]) ** 2).sum(axis=2), axis=1)
    wv = (frame.grid.weights * frame.values).ravel()
    return np.bincount(owner, weights=wv, minlength=len(modes))


# --------------------------------------------------------------------------
# particle CSV


def _looks_numeric(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_particles_csv(path, seed=None):
    """Load one point per row; a first row made only of non-numeric tokens is a header."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for rowno, row in enumerate(csv.reader(fh), start=1):
            row = [tok.strip() for tok in row]
            if not row or all(tok == "" for tok in row):
                continue
            if rowno == 1 and not any(_looks_numeric(tok) for tok in row):
                continue
            vals = []
            for colno, tok in enumerate(row, start=1):
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise ParseError(
                        f"{path}: row {rowno}, column {colno}: cannot parse {tok!r}", rowno, colno
                    ) from None
                if not math.isfinite(vals[-1]):
                    raise ParseError(f"{path}: row {rowno}, column {colno}: non-finite value", rowno, colno)
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DimensionMismatch(
                    f"{path}: row {rowno} has {len(vals)} columns, expected {width}", rowno, len(vals)
                )
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return ParticleEnsemble(np.array(rows), seed)


def write_particles_csv(particles, path, header=True):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([f"x{i}" for i in range(particles.ndim)])
        for row in particles.positions:
            writer.writerow([repr(float(v)) for v in row])
