"""Particle-level dynamics: mean-shift maps, ball means and velocity-field advection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import kernels
from .density import KernelSpec, ParticleEnsemble, density_gradient
from .errors import EmptyKernelSupport, ZeroDensity

# f below this fraction of max(f) is treated as zero in ratios by f
POSITIVITY_FLOOR = 1e-12


@dataclass(frozen=True)
class MeanShiftConfig:
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("gaussian", 1.0))
    a2: float = 1.0
    d: float = 1.0
    max_iter: int = 300
    eps: float = 1e-6
    merge_tol: float = 1e-3
    t0: float = 0.0
    dt: float = 1.0

    def __post_init__(self):
        for name in ("a2", "d", "eps", "merge_tol", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be positive")

    @property
    def radius(self):
        """Kernel scale: gaussian bandwidth, or the ball radius for flat-ball kernels."""
        if self.kernel.bandwidth is not None:
            return float(np.atleast_1d(self.kernel.bandwidth)[0])
        if self.kernel.kind == "flat-ball":
            return self.d
        raise ValueError("gaussian mean shift needs an explicit bandwidth")


@dataclass
class TrajectoryLog:
    snapshots: list = field(default_factory=list)
    max_steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    converged: bool = False

    def record(self, positions, max_step, time):
        self.snapshots.append(np.array(positions, float))
        self.max_steps.append(max_step)
        self.times.append(float(time))

    @property
    def iterations(self):
        return len(self.snapshots) - 1

    @property
    def final(self):
        return self.snapshots[-1]

    def ensemble(self, k=-1):
        return ParticleEnsemble(self.snapshots[k])

    def to_jsonl(self, path, positions=False):
        with open(path, "w") as fh:
            for k, (snap, step) in enumerate(zip(self.snapshots, self.max_steps)):
                rec = {"iter": k, "time": self.times[k], "max_step": step}
                if positions:
                    rec["positions"] = snap.tolist()
                fh.write(json.dumps(rec) + "\n")


def generalized_meanshift_map(x, samples, kernel):
    """Kernel- and weight-averaged sample location around ``x``."""
    pos = samples.positions
    x = np.atleast_1d(np.asarray(x, float)).reshape(1, -1)
    if kernel.bandwidth is None:
        raise ValueError("mean-shift map needs an explicit kernel bandwidth")
    bw = float(np.atleast_1d(kernel.bandwidth)[0])
    out, den = kernels.shift_points(
        x, pos, kernel.sample_weights(samples.size), bw, kernels.kind_code(kernel.kind)
    )
    if not den[0] > 0:
        raise EmptyKernelSupport(f"no samples within the kernel support of {x[0].tolist()}")
    return out[0]


def _local_box(grid, x, radius):
    """Index slices of the nodes within ``radius`` (plus one cell) of ``x`` per axis."""
    sl = []
    for xi, (lo, _), h, c in zip(x, grid.extents, grid.spacing, grid.counts):
        a = int(np.floor((xi - radius - lo) / h)) - 1
        b = int(np.ceil((xi + radius - lo) / h)) + 2
        sl.append(slice(max(a, 0), min(b, c)))
    return tuple(sl)


def ball_conditional_mean_step(x, frame, d):
    """Density-weighted mean of the ball B(x, d), by grid quadrature.

    Nodes whose cell straddles the sphere get the fraction of the cell inside it
    along the radial direction (exact in one dimension).
    """
    grid = frame.grid
    x = np.atleast_1d(np.asarray(x, float))
    box = _local_box(grid, x, d)
    axes = [ax[s] for ax, s in zip(grid.axes, box)]
    mesh = np.meshgrid(*axes, indexing="ij")
    r = np.sqrt(sum((m - xi) ** 2 for m, xi in zip(mesh, x)))
    h = float(np.exp(np.mean(np.log(grid.spacing))))
    frac = np.clip(0.5 + (d - r) / h, 0.0, 1.0)
    wf = frac * frame.values[box]
    den = wf.sum()
    if not den > 0:
        raise EmptyKernelSupport(f"ball B({x.tolist()}, {d}) carries no mass")
    return np.array([(wf * m).sum() / den for m in mesh])


def _interpolators(frame, fields):
    return [
        RegularGridInterpolator(frame.grid.axes, f, method="linear", bounds_error=True) for f in fields
    ]


def gradient_step_prediction(x, frame, d, n=None):
    """x + n d^2/(n+2) * grad f / f, with f and grad f interpolated at x."""
    n = frame.grid.ndim if n is None else n
    x = np.atleast_1d(np.asarray(x, float))
    grads = density_gradient(frame)
    f_i, *g_i = _interpolators(frame, (frame.values, *grads))
    fx = float(f_i(x[None, :])[0])
    if fx <= POSITIVITY_FLOOR * frame.values.max():
        raise ZeroDensity(f"f({x.tolist()}) = {fx!r} is below the positivity floor")
    g = np.array([float(gi(x[None, :])[0]) for gi in g_i])
    return x + n * d * d / (n + 2) * g / fx


def velocity_field(frame, a2, floor=POSITIVITY_FLOOR):
    """u = a^2 grad f / f per axis; nodes with f <= floor * max(f) are NaN."""
    grads = density_gradient(frame)
    f = frame.values
    ok = f > floor * f.max()
    safe = np.where(ok, f, 1.0)
    return tuple(np.where(ok, a2 * g / safe, np.nan) for g in grads)


def sample_field(grid, field_, positions):
    """Linear interpolation of a grid field at particle positions; NaN nodes read as 0."""
    vals = np.nan_to_num(field_, nan=0.0)
    if grid.ndim == 1:
        return np.interp(positions[:, 0], grid.axes[0], vals, left=0.0, right=0.0)
    interp = RegularGridInterpolator(grid.axes, vals, bounds_error=False, fill_value=0.0)
    return interp(positions)


def advect_particles(particles, frame_at, a2, t0, t1, substeps, record_every=1):
    """Move particles along u = a^2 grad f / f with explicit midpoint (RK2) steps.

    ``frame_at(t)`` supplies the density frame at time ``t``.
    """
    pos = np.array(particles.positions, float)
    grid = None
    log = TrajectoryLog()
    log.record(pos, None, t0)
    dt = (t1 - t0) / substeps

    def vel(p, t):
        nonlocal grid
        fr = frame_at(t)
        grid = fr.grid
        u = velocity_field(fr, a2)
        return np.stack([sample_field(grid, ui, p) for ui in u], axis=1)

    for k in range(substeps):
        t = t0 + k * dt
        k1 = vel(pos, t)
        k2 = vel(pos + 0.5 * dt * k1, t + 0.5 * dt)
        step = dt * k2
        pos = pos + step
        if (k + 1) % record_every == 0 or k + 1 == substeps:
            log.record(pos, float(np.max(np.linalg.norm(step, axis=1))), t0 + (k + 1) * dt)
    log.converged = True
    return log


def run_blurring_meanshift(particles, config):
    """Move every point simultaneously to its kernel mean over the current ensemble."""
    pos = np.array(particles.positions, float)
    weights = config.kernel.sample_weights(particles.size)
    code = kernels.kind_code(config.kernel.kind)
    bw = config.radius
    log = TrajectoryLog()
    log.record(pos, None, config.t0)
    for k in range(1, int(config.max_iter) + 1):
        new, den = kernels.shift_points(pos, pos, weights, bw, code)
        if not np.all(den > 0):
            raise EmptyKernelSupport("a point lost all neighbours (zero-weight samples?)")
        step = float(np.max(np.linalg.norm(new - pos, axis=1)))
        pos = new
        log.record(pos, step, config.t0 + k * config.dt)
        if step < config.eps:
            log.converged = True
            break
    return log


def detect_modes(log, merge_tol):
    """Single-linkage clusters of the final positions at ``merge_tol``.

    Returns ``[(centroid, count), ...]`` ordered by each cluster's first member.
    Accepts a TrajectoryLog or an ``(N, n)`` array.
    """
    final = log.final if isinstance(log, TrajectoryLog) else np.asarray(log, float)
    final = final.reshape(final.shape[0], -1)
    n = final.shape[0]
    pairs = cKDTree(final).query_pairs(r=merge_tol, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    # relabel by first appearance for a deterministic order
    _, first = np.unique(labels, return_index=True)
    out = []
    for lab in labels[np.sort(first)]:
        members = final[labels == lab]
        out.append((members.mean(axis=0), int(members.shape[0])))
    return out
