"""Named experiment pipelines, their configuration and result persistence."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .density import (
    DensityFrame,
    DomainGrid,
    GaussianMixtureModel,
    KernelSpec,
    ParticleEnsemble,
    frame_modes,
    gmm_rasterize,
    mode_masses,
    read_particles_csv,
    save_frame_json,
)
from .diagnostics import (
    build_series,
    conservation_residual,
    fd_rate,
    particle_pde_gap,
    variance_trace,
)
from .errors import ConfigError, ExperimentError, LabError, ParseError
from .meanshift import (
    MeanShiftConfig,
    advect_particles,
    detect_modes,
    run_blurring_meanshift,
    velocity_field,
)
from .pde import (
    EvolutionSpec,
    crossover_frequency,
    evolve,
    mixture_evolution,
    spectral_propagate,
    stability_probe,
)
from .supervision import SinkFunction, duhamel_solution, supervised_residual

EXPERIMENTS = {
    "gaussian-collapse": "variance contraction of a Gaussian under anti-diffusion",
    "mixture-convergence": "two-component mixture contracting onto its means",
    "entropy-monitor": "entropy decay and its analytic rate along a clustering run",
    "instability-demo": "spectral blow-up of a high-frequency ripple",
    "meanshift-vs-pde": "particles advected by the PDE velocity against the PDE density",
    "supervised-run": "Duhamel solution with a sink term",
}

BASE_DEFAULTS = {
    "experiment": None,
    "seed": 0,
    "output_dir": "lab-output",
    "dataset": None,
    "deterministic": False,
    "grid": {"extents": [[-12.0, 12.0]], "counts": [1024]},
    "initial": {"weights": [1.0], "means": [[0.0]], "variance": 2.0},
    "evolution": {
        "a2": 1.0,
        "t_start": -1.0,
        "t_end": -0.5,
        "substeps": 31,
        "omega_max": None,
        "blowup_threshold": 1e6,
        "noise_floor": 1e-14,
    },
    "meanshift": {
        "kernel": {"kind": "gaussian", "bandwidth": 0.5},
        "ball": {"d": 0.5},
        "a2": 1.0,
        "max_iter": 300,
        "eps": 1e-6,
        "merge_tol": 1e-3,
        "max_points": 2000,
    },
    "particles": {"count": 20000, "kde_bandwidth": None, "record_every": 10},
    "sink": {"kind": "zero"},
    "supervision": {"nodes": 64, "residual_dt": 1e-3},
    "ripple": {"amplitude": 1e-3, "frequency": None},
    "modes": {"rel_height": 0.05},
}

EXPERIMENT_DEFAULTS = {
    "mixture-convergence": {
        "grid": {"extents": [[-16.0, 16.0]], "counts": [2048]},
        "initial": {"weights": [0.5, 0.5], "means": [[-3.0], [3.0]], "variance": 2.0},
        "evolution": {"t_end": -0.05, "substeps": 19},
    },
    "instability-demo": {
        "initial": {"variance": 1.0},
        "evolution": {"t_start": -0.5, "t_end": -0.25, "substeps": 10},
    },
    "meanshift-vs-pde": {"evolution": {"substeps": 100}},
    "supervised-run": {
        "grid": {"extents": [[-10.0, 10.0]], "counts": [512]},
        "initial": {"variance": 0.5},
        "evolution": {"t_start": 0.0, "t_end": -0.5, "substeps": 10},
        "sink": {"kind": "gaussian-well", "center": [0.5], "width": 0.5, "strength": -0.2},
    },
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(out[key], dict) and key != "sink":
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(out[key], val, path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    """A fully materialized run configuration (every default filled in)."""

    raw: dict
    base_dir: Path

    @property
    def name(self):
        return self.raw["experiment"]

    @property
    def seed(self):
        return self.raw["seed"]

    @property
    def output_dir(self):
        return Path(self.raw["output_dir"])

    def grid(self):
        g = self.raw["grid"]
        return DomainGrid(g["extents"], g["counts"])

    def initial_model(self):
        m = self.raw["initial"]
        return GaussianMixtureModel(m["weights"], m["means"], m["variance"])

    def evolution(self):
        return EvolutionSpec(**self.raw["evolution"])

    def meanshift(self):
        m = self.raw["meanshift"]
        kernel = KernelSpec(m["kernel"]["kind"], m["kernel"]["bandwidth"])
        return MeanShiftConfig(kernel, m["a2"], m["ball"]["d"], m["max_iter"], m["eps"], m["merge_tol"])

    def sink(self):
        return SinkFunction.from_config(self.raw["sink"], self.base_dir)

    def dataset(self):
        if self.raw["dataset"] is None:
            return None
        return read_particles_csv(self.base_dir / self.raw["dataset"], self.seed)


def load_config(source, base_dir=None, output_dir=None):
    """Parse and validate a config given as a path or a dict."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        base_dir = base_dir or path.parent
    else:
        user = dict(source)
    base_dir = Path(base_dir or ".")
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    name = user.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    raw = _merge(BASE_DEFAULTS, EXPERIMENT_DEFAULTS.get(name, {}))
    raw = _merge(raw, user)
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be an unsigned integer")
    cfg = ExperimentConfig(raw, base_dir)
    try:
        cfg.grid()
        cfg.initial_model()
        cfg.evolution()
        cfg.meanshift()
        cfg.sink()
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if raw["dataset"] is not None and not (base_dir / raw["dataset"]).is_file():
        raise ConfigError(f"dataset {raw['dataset']!r} does not exist")
    return cfg


# --------------------------------------------------------------------------
# pipelines


def _frame_residuals(frames, a2, frame_at):
    """Conservation residual between consecutive frames, velocity at the midpoint."""
    out = [math.nan]
    for prev, nxt in zip(frames, frames[1:]):
        mid = frame_at(0.5 * (prev.time + nxt.time))
        _, sup = conservation_residual(prev, nxt, velocity_field(mid, a2), nxt.time - prev.time)
        out.append(sup)
    return out


def _propagator(initial, spec):
    cache = {}

    def frame_at(t):
        if t not in cache:
            sub = EvolutionSpec(
                spec.a2, spec.t_start, t, 1, spec.omega_max, spec.blowup_threshold, spec.noise_floor
            )
            cache[t] = spectral_propagate(initial, sub)
        return cache[t]

    return frame_at


def _evolve_gaussian(cfg):
    grid, spec = cfg.grid(), cfg.evolution()
    initial = gmm_rasterize(cfg.initial_model(), grid, spec.t_start)
    frames, report = evolve(initial, spec)
    residuals = _frame_residuals(frames, spec.a2, _propagator(initial, spec))
    return frames, report, build_series(frames, spec.a2, residuals)


def _gaussian_collapse(cfg):
    spec = cfg.evolution()
    frames, report, series = _evolve_gaussian(cfg)
    trace = variance_trace(frames)
    expected = -2 * spec.a2
    results = {
        "variance_slopes": trace.slopes.tolist(),
        "slope_residuals": trace.residuals.tolist(),
        "expected_slope": expected,
        "relative_error": [abs(s / expected - 1) for s in trace.slopes],
    }
    return frames, series, report, None, results


def _entropy_monitor(cfg):
    frames, report, series = _evolve_gaussian(cfg)
    H = np.array(series.channels["entropy"])
    rate = np.array(series.channels["entropy_rate_analytic"])
    fd = fd_rate(series.times, H)
    rel = np.abs(fd[1:-1] / rate[1:-1] - 1)
    results = {
        "entropy_strictly_decreasing": bool(np.all(np.diff(H) < 0)),
        "rate_relative_error_max": float(rel.max()) if rel.size else 0.0,
        "rate_relative_error": rel.tolist(),
    }
    return frames, series, report, None, results


def _mixture_convergence(cfg):
    grid, spec, model = cfg.grid(), cfg.evolution(), cfg.initial_model()
    initial = gmm_rasterize(model, grid, spec.t_start)
    frames, report = evolve(initial, spec)
    series = build_series(frames, spec.a2)
    final = frames[-1]
    modes = frame_modes(final, cfg.raw["modes"]["rel_height"])
    masses = mode_masses(final, modes) if modes else []
    closed = mixture_evolution(model, spec.a2, spec.t_start, spec.t_end)
    results = {"modes": [m.tolist() for m in modes], "mode_masses": list(map(float, masses))}
    if not closed.degenerate:
        ref = gmm_rasterize(closed, grid, spec.t_end)
        results["closed_form_sup_gap"] = float(np.abs(ref.values - final.values).max())
        results["closed_form_variance"] = closed.variance
    return frames, series, report, None, results


def rippled_gaussian(model, grid, amplitude, frequency, t=0.0):
    """Gaussian density modulated by (1 + amplitude cos(frequency x_0))."""
    base = gmm_rasterize(model, grid, t)
    x0 = grid.mesh()[0]
    return DensityFrame.from_values(grid, base.values * (1 + amplitude * np.cos(frequency * x0)), t)


def _instability_demo(cfg):
    grid, spec, model = cfg.grid(), cfg.evolution(), cfg.initial_model()
    amp = cfg.raw["ripple"]["amplitude"]
    # a cos ripple puts amplitude/2 into each of the two symmetric coefficients
    omega_star = crossover_frequency(amp / 2, spec.a2, spec.dt, spec.blowup_threshold)
    freq = cfg.raw["ripple"]["frequency"] or 1.5 * omega_star
    plain = gmm_rasterize(model, grid, spec.t_start)
    rippled = rippled_gaussian(model, grid, amp, freq, spec.t_start)
    probe_plain = stability_probe(plain, spec)
    probe_rippled = stability_probe(rippled, spec)
    frames, report = evolve(rippled, spec, raise_on_blowup=False)
    series = build_series(frames, spec.a2)
    results = {
        "crossover_frequency": omega_star,
        "ripple_frequency": freq,
        "ripple_amplitude": amp,
        "blew_up": probe_rippled.blew_up,
        "offending_frequency": probe_rippled.to_dict()["offending_frequency"],
        "max_growth": probe_rippled.max_growth,
        "plain_blew_up": probe_plain.blew_up,
        "plain_max_growth": probe_plain.max_growth,
    }
    return frames, series, report, None, results


def _meanshift_vs_pde(cfg):
    grid, spec, model = cfg.grid(), cfg.evolution(), cfg.initial_model()
    pcfg = cfg.raw["particles"]
    particles = cfg.dataset() or ParticleEnsemble.sample(model, pcfg["count"], cfg.seed)
    initial = gmm_rasterize(model, grid, spec.t_start)
    frame_at = _propagator(initial, spec)
    log = advect_particles(
        particles, frame_at, spec.a2, spec.t_start, spec.t_end, spec.substeps, pcfg["record_every"]
    )
    frames = [frame_at(t) for t in log.times]
    kernel = KernelSpec("gaussian", pcfg["kde_bandwidth"])
    gaps = particle_pde_gap(log, frames, kernel)
    series = build_series(frames, spec.a2, _frame_residuals(frames, spec.a2, frame_at), gaps)

    ms = cfg.meanshift()
    sub = ParticleEnsemble(particles.positions[: cfg.raw["meanshift"]["max_points"]])
    ms_log = run_blurring_meanshift(sub, ms)
    modes = detect_modes(ms_log, ms.merge_tol)
    results = {
        "particle_variance": np.var(log.final, axis=0).tolist(),
        "pde_variance": frames[-1].variance().tolist(),
        "gap_baseline": gaps[0],
        "gap_max_ratio": max(g / gaps[0] for g in gaps) if gaps[0] > 0 else math.inf,
        "meanshift_iterations": ms_log.iterations,
        "meanshift_converged": ms_log.converged,
        "meanshift_modes": [{"point": p.tolist(), "count": c} for p, c in modes],
    }
    return frames, series, None, log, results


def _supervised_run(cfg):
    grid, spec, model = cfg.grid(), cfg.evolution(), cfg.initial_model()
    sink = cfg.sink()
    sup = cfg.raw["supervision"]
    if spec.t_start > 0 or spec.t_end > 0:
        raise ConfigError("supervised-run needs t_start, t_end <= 0")
    phi0 = gmm_rasterize(model, grid, 0.0)
    frames, residuals, normalizers = [], [], []

    def solve(t):
        return duhamel_solution(phi0, sink, spec.a2, t, sup["nodes"])

    for t in spec.times:
        sol = solve(float(t))
        frames.append(sol.f)
        normalizers.append(sol.normalizer)
        if t < 0:
            _, r = supervised_residual(solve, sink, spec.a2, float(t), sup["residual_dt"], grid)
        else:
            r = math.nan
        residuals.append(r)
    series = build_series(frames, spec.a2, residuals)
    results = {"normalizers": normalizers, "residual_sup": residuals}
    return frames, series, None, None, results


PIPELINES = {
    "gaussian-collapse": _gaussian_collapse,
    "mixture-convergence": _mixture_convergence,
    "entropy-monitor": _entropy_monitor,
    "instability-demo": _instability_demo,
    "meanshift-vs-pde": _meanshift_vs_pde,
    "supervised-run": _supervised_run,
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_experiment(cfg, threads=None, deterministic=None):
    """Run the named pipeline and write diagnostics, frames, trajectory and manifest.

    Returns the manifest dict.  Module errors are wrapped in ExperimentError.
    """
    deterministic = cfg.raw["deterministic"] if deterministic is None else deterministic
    cfg.raw["deterministic"] = bool(deterministic)
    if deterministic:
        _accel.set_threads(1)
    elif threads:
        _accel.set_threads(threads)
    out = cfg.output_dir
    start = time.perf_counter()
    try:
        frames, series, report, log, results = PIPELINES[cfg.name](cfg)
    except (ConfigError, ParseError):
        raise
    except LabError as exc:
        raise ExperimentError(f"{cfg.name}: {type(exc).__name__}: {exc}") from exc

    (out / "frames").mkdir(parents=True, exist_ok=True)
    for old in (out / "frames").glob("frame_*.json"):
        old.unlink()
    series.to_csv(out / "diagnostics.csv")
    for k, fr in enumerate(frames):
        save_frame_json(fr, out / "frames" / f"frame_{k:03d}.json")
    if report is not None:
        (out / "evolution.json").write_text(json.dumps(_jsonable(report.to_dict())))
    if log is not None:
        log.to_jsonl(out / "trajectory.jsonl")

    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "version": __version__,
        "experiment": cfg.name,
        "seed": cfg.seed,
        "backend": _accel.backend(),
        "config": cfg.raw,
        "results": results,
        "files": [
            {"path": p.relative_to(out).as_posix(), "sha256": _sha256(p), "bytes": p.stat().st_size}
            for p in files
        ],
        "duration_s": time.perf_counter() - start,
    }
    manifest = _jsonable(manifest)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest
