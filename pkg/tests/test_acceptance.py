"""Acceptance criteria, one test each, at the stated tolerances and runtime budgets.

Every test records a PASS/FAIL line that is printed in the terminal summary.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from mslab.cli import main
from mslab.density import (
    DensityFrame,
    DomainGrid,
    GaussianMixtureModel,
    KernelSpec,
    ParticleEnsemble,
    frame_modes,
    gmm_rasterize,
    mode_masses,
)
from mslab.diagnostics import (
    build_series,
    conservation_residual,
    fd_rate,
    particle_pde_gap,
    variance_trace,
)
from mslab.errors import SpectralBlowUp
from mslab.experiments import rippled_gaussian
from mslab.meanshift import (
    advect_particles,
    ball_conditional_mean_step,
    gradient_step_prediction,
    velocity_field,
)
from mslab.pde import (
    EvolutionSpec,
    crossover_frequency,
    evolve,
    heat_kernel_solution,
    mixture_evolution,
    spectral_propagate,
    stability_probe,
)
from mslab.supervision import SinkFunction, duhamel_solution, supervised_residual

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def record(num, name, ok, detail):
    ACCEPTANCE.append((num, name, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {num} {name}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def collapse_run():
    """Criterion 1's run: N(0,2), a^2 = 1, t = -1 -> -0.1, 32 samples."""
    start = time.perf_counter()
    grid = DomainGrid.uniform(-12, 12, 1024)
    initial = gmm_rasterize(GaussianMixtureModel([1.0], [0.0], 2.0), grid, -1.0)
    spec = EvolutionSpec(1.0, -1.0, -0.1, substeps=31)
    frames = [initial] + [
        spectral_propagate(initial, EvolutionSpec(1.0, -1.0, float(t))) for t in spec.times[1:]
    ]
    series = build_series(frames, 1.0)
    return frames, series, time.perf_counter() - start


def test_c01_variance_contraction(collapse_run):
    frames, _, elapsed = collapse_run
    slope = variance_trace(frames).slopes[0]
    rel = abs(slope / -2.0 - 1)
    record(1, "variance contraction", rel <= 0.025 and elapsed < 5,
           f"slope {slope:.4f} (target -2 +/- 2.5%, rel err {rel:.3%}), {elapsed:.2f} s")


def test_c02_closed_form_equivalence():
    start = time.perf_counter()
    grid = DomainGrid.uniform(-12, 12, 2048)
    x = grid.axes[0] - 0.5
    bump = np.where(np.abs(x) < 3, 1 + np.cos(np.pi * x / 3), 0.0)
    phi0 = DensityFrame.from_values(grid, bump, 0.0)
    a = spectral_propagate(phi0, EvolutionSpec(1.0, 0.0, -0.5))
    b = heat_kernel_solution(phi0, 1.0, -0.5)
    gap = float(np.abs(a.values - b.values).max())
    elapsed = time.perf_counter() - start
    record(2, "closed-form equivalence", gap < 1e-5 and elapsed < 10, f"sup gap {gap:.2e} (< 1e-5), {elapsed:.2f} s")


def test_c03_mixture_convergence():
    start = time.perf_counter()
    grid = DomainGrid.uniform(-16, 16, 2048)
    model = GaussianMixtureModel([0.5, 0.5], [-3.0, 3.0], 2.0)
    final = spectral_propagate(gmm_rasterize(model, grid, -1.0), EvolutionSpec(1.0, -1.0, -0.05))
    modes = sorted(float(m[0]) for m in frame_modes(final, 0.05))
    h = grid.spacing[0]
    modes_ok = len(modes) == 2 and abs(modes[0] + 3) <= h and abs(modes[1] - 3) <= h
    masses = mode_masses(final, [[m] for m in modes]) if modes else []
    split_ok = len(masses) == 2 and np.all(np.abs(masses - 0.5) <= 0.02)
    ref = gmm_rasterize(mixture_evolution(model, 1.0, -1.0, -0.05), grid)
    gap = float(np.abs(ref.values - final.values).max())
    elapsed = time.perf_counter() - start
    ok = modes_ok and split_ok and gap <= 1e-5 and elapsed < 10
    record(3, "mixture convergence", ok,
           f"modes {[round(m, 4) for m in modes]} (cell {h:.4f}, ok={modes_ok}), "
           f"masses {[round(float(m), 4) for m in masses]} (ok={bool(split_ok)}), "
           f"closed-form gap {gap:.2e} (<= 1e-5), {elapsed:.2f} s")


def test_c04_entropy_decay(collapse_run):
    _, series, elapsed = collapse_run
    H = np.array(series.channels["entropy"])
    rate = np.array(series.channels["entropy_rate_analytic"])
    fd = fd_rate(series.times, H)
    rel = np.abs(fd[1:-1] / rate[1:-1] - 1)
    mono = bool(np.all(np.diff(H) < 0))
    bad = int((rel > 0.02).sum())
    record(4, "entropy decay", mono and bad == 0 and elapsed < 5,
           f"strictly decreasing={mono}, fd-vs-analytic max rel err {rel.max():.2%} "
           f"({bad}/{rel.size} interior stamps over 2%)")


def test_c05_instability():
    start = time.perf_counter()
    grid = DomainGrid.uniform(-12, 12, 1024)
    var, a2, amp = 1.0, 1.0, 1e-3
    dt = var / (2 * a2)
    spec = EvolutionSpec(a2, -0.5, -0.5 + dt)
    omega = crossover_frequency(amp / 2, a2, dt, spec.blowup_threshold)
    model = GaussianMixtureModel([1.0], [0.0], var)
    rippled = rippled_gaussian(model, grid, amp, 1.5 * omega, -0.5)
    plain = gmm_rasterize(model, grid, -0.5)
    probe = stability_probe(rippled, spec)
    try:
        spectral_propagate(rippled, spec)
        raised = False
    except SpectralBlowUp:
        raised = True
    plain_probe = stability_probe(plain, spec)
    plain_frame = spectral_propagate(plain, spec)
    elapsed = time.perf_counter() - start
    ok = probe.blew_up and raised and not plain_probe.blew_up and plain_frame.mass > 0 and elapsed < 5
    record(5, "instability", ok,
           f"w* {omega:.3f}, ripple at {1.5 * omega:.3f}: growth {probe.max_growth:.2e} raised={raised}; "
           f"plain growth {plain_probe.max_growth:.2e}, {elapsed:.2f} s")


def test_c06_meanshift_expansion():
    start = time.perf_counter()
    grid = DomainGrid.uniform(-6, 6, 12001)
    frame = gmm_rasterize(GaussianMixtureModel([1.0], [0.0], 1.0), grid)
    ds = np.array([0.4, 0.2, 0.1])
    gaps = np.array(
        [abs(ball_conditional_mean_step(0.5, frame, d)[0] - gradient_step_prediction(0.5, frame, d)[0]) for d in ds]
    )
    slope = np.polyfit(np.log(ds), np.log(gaps), 1)[0]
    elapsed = time.perf_counter() - start
    record(6, "mean-shift expansion", slope >= 2.7 and elapsed < 5,
           f"gaps {', '.join(f'{g:.2e}' for g in gaps)}, log-log slope {slope:.3f} (>= 2.7), {elapsed:.2f} s")


def test_c07_micro_macro():
    start = time.perf_counter()
    grid = DomainGrid.uniform(-12, 12, 1024)
    model = GaussianMixtureModel([1.0], [0.0], 2.0)
    initial = gmm_rasterize(model, grid, -1.0)
    cache = {}

    def frame_at(t):
        if t not in cache:
            cache[t] = spectral_propagate(initial, EvolutionSpec(1.0, -1.0, t))
        return cache[t]

    particles = ParticleEnsemble.sample(model, 100_000, seed=7)
    log = advect_particles(particles, frame_at, 1.0, -1.0, -0.5, 100, record_every=10)
    frames = [frame_at(t) for t in log.times]
    gaps = particle_pde_gap(log, frames, KernelSpec("gaussian", None))
    var = float(np.var(log.final))
    ratio = max(gaps) / gaps[0]
    elapsed = time.perf_counter() - start
    record(7, "micro-macro correspondence", abs(var - 1) <= 0.05 and ratio <= 3 and elapsed < 60,
           f"particle variance {var:.5f} (1 +/- 0.05), gap ratio {ratio:.3f} (<= 3, baseline {gaps[0]:.2e}), "
           f"{elapsed:.1f} s")


def test_c08_supervised():
    start = time.perf_counter()
    grid = DomainGrid.uniform(-9, 9, 401)
    phi0 = gmm_rasterize(GaussianMixtureModel([1.0], [0.0], 0.5), grid)
    zero = duhamel_solution(phi0, SinkFunction("zero"), 1.0, -0.5, 16)
    ref = heat_kernel_solution(phi0, 1.0, -0.5)
    reduction = float(np.abs(zero.combined - ref.values).max())
    sink = SinkFunction("gaussian-well", [0.5], 0.5, -0.2)
    sups = []
    for n, nodes in ((201, 8), (401, 16), (801, 32)):
        g = DomainGrid.uniform(-9, 9, n)
        f0 = gmm_rasterize(GaussianMixtureModel([1.0], [0.0], 0.5), g)
        _, r = supervised_residual(lambda t: duhamel_solution(f0, sink, 1.0, t, nodes), sink, 1.0, -0.5, 1e-3, g)
        sups.append(r)
    mono = sups[0] > sups[1] > sups[2]
    elapsed = time.perf_counter() - start
    record(8, "supervised reduction and residual", reduction < 1e-10 and mono and elapsed < 30,
           f"zero-sink gap {reduction:.1e} (< 1e-10), residuals {', '.join(f'{r:.2e}' for r in sups)}, "
           f"{elapsed:.1f} s")


def test_c09_conservation():
    start = time.perf_counter()
    t = -0.75
    sups = []
    for n, d in ((201, 0.02), (401, 0.01), (801, 0.005)):
        grid = DomainGrid.uniform(-10, 10, n)

        def fam(s):
            return gmm_rasterize(GaussianMixtureModel([1.0], [0.0], -2 * s), grid, s)

        u = velocity_field(fam(t + d / 2), 1.0)
        sups.append(conservation_residual(fam(t), fam(t + d), u, d)[1])
    ok = sups[1] <= sups[0] / 2 and sups[2] <= sups[1] / 2
    elapsed = time.perf_counter() - start
    record(9, "conservation", ok and elapsed < 10,
           f"residuals {', '.join(f'{r:.2e}' for r in sups)}, ratios "
           f"{sups[0] / sups[1]:.2f}, {sups[1] / sups[2]:.2f} (>= 2), {elapsed:.2f} s")


def test_c10_determinism(tmp_path):
    cfg = str(CONFIGS / "gaussian-collapse.json")
    codes = [main(["run", cfg, "--out", str(tmp_path / k), "--deterministic"]) for k in "ab"]
    same = all(c == 0 for c in codes) and (
        (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()
    )
    record(10, "determinism", same, f"exit codes {codes}, diagnostics.csv byte-identical={same}")


def test_crossover_is_finite():
    # guard for criterion 5's setup
    assert math.isfinite(crossover_frequency(5e-4, 1.0, 0.5))
