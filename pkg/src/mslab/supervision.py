"""Supervised clustering: sink terms and the Duhamel solution of

    df/dt + a^2 lap f = psi(x, t),   f(., 0) = phi_0,   t <= 0.

Sign convention: psi > 0 adds density as time runs forward (a source), psi < 0
removes it (a sink).  Running the equation backwards from t = 0, a source
therefore *lowers* the reconstructed density, so the source part is

    g2(x, t) = - int_t^0 int psi(xi, tau) G(x, t; xi, tau) dxi dtau,

with G the Gaussian of variance 2 a^2 (tau - t).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .density import DensityFrame, DomainGrid, GaussianMixtureModel, delta_surrogate, gmm_rasterize
from .errors import ConfigError, InvalidSupervision, InvalidTimeOrder
from .pde import gaussian_smooth, heat_kernel_solution, pde_residual

SINK_KINDS = ("zero", "gaussian-well", "tabulated")


@dataclass(frozen=True, eq=False)
class SinkFunction:
    """psi(x, t): zero, a static Gaussian well, or values tabulated on a grid over time.

    A gaussian well is ``strength * N(x; center, width^2 I)``, so ``strength`` is
    the mass injected per unit time.
    """

    kind: str = "zero"
    center: tuple | None = None
    width: float = 1.0
    strength: float = 0.0
    grid: DomainGrid | None = None
    times: np.ndarray | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in SINK_KINDS:
            raise ValueError(f"unknown sink kind {self.kind!r}")
        if self.kind == "gaussian-well":
            if self.center is None:
                raise ValueError("gaussian-well needs a center")
            if not self.width > 0:
                raise ValueError("gaussian-well width must be positive")
            object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if self.kind == "tabulated":
            if self.grid is None or self.times is None or self.table is None:
                raise ValueError("tabulated sink needs grid, times and table")
            times = np.asarray(self.times, float)
            table = np.asarray(self.table, float).reshape((len(times),) + self.grid.shape)
            if not np.all(np.isfinite(table)):
                raise ValueError("tabulated sink values must be finite")
            if len(times) > 1 and np.any(np.diff(times) <= 0):
                raise ValueError("tabulated sink times must increase")
            object.__setattr__(self, "times", times)
            object.__setattr__(self, "table", table)

    def evaluate(self, grid, t):
        """psi on every node of ``grid`` at time ``t``."""
        if self.kind == "zero":
            return np.zeros(grid.shape)
        if self.kind == "gaussian-well":
            c = np.asarray(self.center)
            if c.shape != (grid.ndim,):
                raise ValueError("sink center dimension differs from the grid")
            r2 = sum((m - ci) ** 2 for m, ci in zip(grid.mesh(), c))
            norm = (2 * math.pi * self.width**2) ** (-grid.ndim / 2)
            return self.strength * norm * np.exp(-r2 / (2 * self.width**2))
        if grid != self.grid:
            raise ValueError("tabulated sink is defined on a different grid")
        lo, hi = self.times[0], self.times[-1]
        if not lo - 1e-12 <= t <= hi + 1e-12:
            raise ValueError(f"t={t} outside the tabulated range [{lo}, {hi}]")
        if len(self.times) == 1:
            return self.table[0].copy()
        k = int(np.clip(np.searchsorted(self.times, t) - 1, 0, len(self.times) - 2))
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1 - w) * self.table[k] + w * self.table[k + 1]

    @property
    def is_zero(self):
        return self.kind == "zero" or (self.kind == "gaussian-well" and self.strength == 0)

    def to_config(self):
        if self.kind == "zero":
            return {"kind": "zero"}
        if self.kind == "gaussian-well":
            return {"kind": self.kind, "center": list(self.center), "width": self.width, "strength": self.strength}
        return {"kind": "tabulated", "times": self.times.tolist()}

    @classmethod
    def from_config(cls, cfg, base_dir="."):
        """Parse ``{kind, center, width, strength}`` or ``{kind: "tabulated", file}``.

        The tabulated file holds ``{grid: {dims, extents, counts}, times: [...],
        values: [[row-major values], ...]}`` with one value list per time.
        """
        cfg = dict(cfg or {"kind": "zero"})
        kind = cfg.pop("kind", "zero")
        try:
            if kind == "zero":
                return cls("zero")
            if kind == "gaussian-well":
                return cls(kind, cfg["center"], float(cfg.get("width", 1.0)), float(cfg.get("strength", 0.0)))
            if kind == "tabulated":
                path = Path(base_dir) / cfg["file"]
                data = json.loads(path.read_text())
                grid = DomainGrid.from_dict(data["grid"])
                return cls(kind, grid=grid, times=data["times"], table=data["values"])
        except (KeyError, TypeError, ValueError, OSError) as exc:
            raise ConfigError(f"bad sink config: {exc}") from exc
        raise ConfigError(f"unknown sink kind {kind!r}")


def green_kernel(x, xi, t, tau, a2):
    """Response at (x, t) to a unit point source at (xi, tau), t < tau <= 0."""
    if not t < tau <= 0:
        raise InvalidTimeOrder(f"need t < tau <= 0, got t={t}, tau={tau}")
    x = np.atleast_1d(np.asarray(x, float))
    xi = np.atleast_1d(np.asarray(xi, float))
    n = x.shape[-1]
    r2 = np.sum((x - xi) ** 2, axis=-1)
    s = -4 * a2 * (t - tau)
    return (s * math.pi) ** (-n / 2) * np.exp(-r2 / s)


def source_integral(sink, grid, a2, t, nodes=64):
    """g2 on the grid: composite midpoint rule in tau, grid quadrature in xi.

    Contributions are accumulated in node order, so the result is reproducible.
    """
    if t > 0:
        raise InvalidTimeOrder("supervised solution needs t <= 0")
    g2 = np.zeros(grid.shape)
    if t == 0 or getattr(sink, "is_zero", False):
        return g2
    dtau = -t / nodes
    for k in range(nodes):
        tau = t + (k + 0.5) * dtau
        psi = sink.evaluate(grid, tau)
        g2 -= dtau * gaussian_smooth(psi, grid, 2 * a2 * (tau - t))
    return g2


@dataclass(frozen=True, eq=False)
class SupervisedSolution:
    g1: DensityFrame
    g2: np.ndarray
    f: DensityFrame
    normalizer: float

    @property
    def combined(self):
        """g1 + g2 before normalization."""
        return self.g1.values + self.g2


def _combine(g1, g2):
    g = g1.values + g2
    gmax = np.abs(g).max()
    if g.min() < -1e-8 * gmax:
        raise InvalidSupervision(f"g1 + g2 reaches {g.min():.3g}; the sink is too strong")
    M = g1.grid.integrate(g)
    if not M > 0:
        raise InvalidSupervision("g1 + g2 has no positive mass")
    f = DensityFrame(g1.grid, np.maximum(g, 0.0) / M, g1.time)
    return SupervisedSolution(g1, g2, f, float(M))


def duhamel_solution(initial, sink, a2, t, nodes=64):
    """Supervised density at ``t <= 0`` from the t = 0 profile ``initial``."""
    g1 = heat_kernel_solution(initial, a2, t)
    g2 = source_integral(sink, initial.grid, a2, t, nodes)
    return _combine(g1, g2)


def supervised_mixture_solution(model, sink, a2, t, grid, nodes=64):
    """Duhamel solution whose homogeneous part is the converging mixture.

    ``model`` supplies the focal points (means) and weights; its variance is
    replaced by 2 a^2 (-t), or by a delta surrogate at t = 0.
    """
    if t < 0:
        mix = GaussianMixtureModel(model.weights, model.means, 2 * a2 * (-t))
    else:
        mix = delta_surrogate(model.means, grid, model.weights)
    g1 = gmm_rasterize(mix, grid, t)
    g2 = source_integral(sink, grid, a2, t, nodes)
    return _combine(g1, g2)


def supervised_residual(solve, sink, a2, t, dt, grid):
    """Interior sup-norm of  dg/dt + a^2 lap g - psi  for g = g1 + g2 at time t.

    ``solve(t)`` returns a SupervisedSolution; the residual is taken on the
    unnormalized combination because the normalizer varies with t.
    """
    prev, mid, nxt = (solve(s).combined for s in (t - dt, t, t + dt))
    return pde_residual(prev, mid, nxt, dt, a2, grid, sink.evaluate(grid, t))
