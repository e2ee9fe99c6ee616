"""Measurable laws of the dynamics: entropy, variance contraction, conservation and
the gap between particles and the PDE density."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .density import KernelSpec, ParticleEnsemble, density_gradient, kde_estimate
from .errors import TimeMisalignment
from .meanshift import POSITIVITY_FLOOR

ENTROPY_FLOOR = 1e-300


def entropy(frame):
    """Differential entropy -int f log f in nats (0 log 0 = 0)."""
    f = frame.values
    pos = f >= ENTROPY_FLOOR
    integrand = np.zeros_like(f)
    integrand[pos] = f[pos] * np.log(f[pos])
    return -frame.grid.integrate(integrand)


def entropy_rate_analytic(frame, a2):
    """dH/dt = -a^2 int |grad f|^2 / f, skipping nodes below the positivity floor."""
    f = frame.values
    ok = f > POSITIVITY_FLOOR * f.max()
    g2 = sum(g**2 for g in density_gradient(frame))
    integrand = np.where(ok, g2 / np.where(ok, f, 1.0), 0.0)
    return -a2 * frame.grid.integrate(integrand)


def ols_slope(x, y):
    """Least-squares slope and RMS residual of y against x."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = float(np.sqrt(res[0] / len(x))) if len(res) else 0.0
    return float(coef[0]), rms


@dataclass
class VarianceTrace:
    times: np.ndarray
    variances: np.ndarray  # (stamps, ndim)
    slopes: np.ndarray
    residuals: np.ndarray


def variance_trace(frames):
    """Per-axis variance of each frame and the OLS slope of variance against time."""
    if len(frames) < 2:
        raise ValueError("variance trace needs at least two frames")
    times = np.array([fr.time for fr in frames])
    var = np.array([fr.variance() for fr in frames])
    fits = [ols_slope(times, var[:, k]) for k in range(var.shape[1])]
    return VarianceTrace(times, var, np.array([s for s, _ in fits]), np.array([r for _, r in fits]))


def conservation_residual(frame_t, frame_next, velocity, delta):
    """(f(t+delta) - f(t))/delta + div(u f) with central differences in space.

    The flux uses the time-centred density (f(t) + f(t+delta))/2, so ``velocity``
    should be evaluated at t + delta/2.  Masked (NaN) velocities carry no flux.
    Returns the residual field and its sup-norm.
    """
    if frame_t.grid != frame_next.grid:
        raise ValueError("frames live on different grids")
    if not delta > 0:
        raise ValueError("delta must be positive")
    grid = frame_t.grid
    f_mid = 0.5 * (frame_t.values + frame_next.values)
    div = np.zeros(grid.shape)
    for axis, (u, h) in enumerate(zip(velocity, grid.spacing)):
        flux = np.nan_to_num(np.asarray(u) * f_mid, nan=0.0)
        div += np.gradient(flux, h, axis=axis, edge_order=2)
    r = (frame_next.values - frame_t.values) / delta + div
    return r, float(np.abs(r).max())


def _spacing(times):
    d = np.diff(np.sort(np.asarray(times, float)))
    d = d[d > 0]
    return float(d.min()) if d.size else 0.0


def particle_pde_gap(log, frames, kernel=None):
    """Sup-norm distance between the particles' KDE and each PDE frame.

    Each frame is paired with the log snapshot nearest in time; a pairing further
    apart than half the stamp spacing raises TimeMisalignment.
    """
    kernel = kernel or KernelSpec("gaussian", None)
    log_times = np.asarray(log.times, float)
    delta = _spacing(log_times) or _spacing([fr.time for fr in frames])
    tol = delta / 2 if delta > 0 else 1e-12
    gaps = []
    for fr in frames:
        k = int(np.argmin(np.abs(log_times - fr.time)))
        if abs(log_times[k] - fr.time) > tol:
            raise TimeMisalignment(f"no trajectory snapshot within {tol:g} of t={fr.time}")
        est = kde_estimate(ParticleEnsemble(log.snapshots[k]), kernel, fr.grid, fr.time)
        gaps.append(float(np.abs(est.values - fr.values).max()))
    return gaps


def fd_rate(times, values):
    """Central differences at interior stamps (NaN at both ends)."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    out = np.full(len(v), np.nan)
    out[1:-1] = (v[2:] - v[:-2]) / (t[2:] - t[:-2])
    return out


@dataclass
class DiagnosticSeries:
    times: list
    channels: dict = field(default_factory=dict)

    def columns(self):
        var = sorted((k for k in self.channels if k.startswith("var_axis")), key=lambda k: int(k[8:]))
        return ["entropy", "entropy_rate_analytic", *var, "mass", "residual", "gap"]

    def check(self):
        for name, vals in self.channels.items():
            if len(vals) != len(self.times):
                raise ValueError(f"channel {name} has {len(vals)} values for {len(self.times)} stamps")
        mass = np.asarray(self.channels.get("mass", []), float)
        if mass.size and np.any(np.abs(mass - 1) > 1e-6):
            raise ValueError("mass channel left 1 +/- 1e-6")

    def to_csv(self, path):
        self.check()
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", *cols])
            for k, t in enumerate(self.times):
                row = [repr(float(t))]
                for c in cols:
                    vals = self.channels.get(c)
                    row.append(repr(float(vals[k])) if vals is not None else "nan")
                w.writerow(row)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
        return cls(list(data[:, 0]), {h: list(data[:, i]) for i, h in enumerate(header) if i})


def build_series(frames, a2, residuals=None, gaps=None):
    """Diagnostic channels for a sequence of frames."""
    times = [fr.time for fr in frames]
    ch = {
        "entropy": [entropy(fr) for fr in frames],
        "entropy_rate_analytic": [entropy_rate_analytic(fr, a2) for fr in frames],
        "mass": [fr.mass for fr in frames],
    }
    var = np.array([fr.variance() for fr in frames])
    for k in range(var.shape[1]):
        ch[f"var_axis{k}"] = list(var[:, k])
    nan = [float("nan")] * len(frames)
    ch["residual"] = list(residuals) if residuals is not None else nan
    ch["gap"] = list(gaps) if gaps is not None else nan
    series = DiagnosticSeries(times, ch)
    series.check()
    return series
