import math

import numpy as np
import pytest

from mslab.density import DensityFrame, DomainGrid, GaussianMixtureModel, KernelSpec, ParticleEnsemble, gmm_rasterize, kde_estimate
from mslab.diagnostics import (
    DiagnosticSeries,
    build_series,
    conservation_residual,
    entropy,
    entropy_rate_analytic,
    fd_rate,
    ols_slope,
    particle_pde_gap,
    variance_trace,
)
from mslab.errors import TimeMisalignment
from mslab.meanshift import TrajectoryLog, velocity_field
from mslab.pde import EvolutionSpec, evolve

H_STD_NORMAL = 1.41893853320467274178032973641  # 0.5 log(2 pi e), mpmath


def gauss(var, grid, t=0.0, mean=0.0):
    return gmm_rasterize(GaussianMixtureModel([1.0], [mean], var), grid, t)


def test_entropy_values(std_normal):
    assert abs(entropy(std_normal) - H_STD_NORMAL) < 1e-4
    unit = DomainGrid.uniform(0, 1, 1001)
    assert abs(entropy(DensityFrame.from_values(unit, np.ones(unit.shape)))) < 1e-6
    wide = DomainGrid.uniform(0, 2, 1001)
    assert entropy(DensityFrame.from_values(wide, np.ones(wide.shape))) == pytest.approx(math.log(2), abs=1e-6)


def test_entropy_translation_invariant():
    grid = DomainGrid.uniform(-12, 12, 1201)
    a = gauss(1.0, grid)
    b = DensityFrame(grid, np.roll(a.values, 37))
    assert abs(entropy(a) - entropy(b)) < 1e-12


def test_entropy_rate_values(std_normal):
    unit = DomainGrid.uniform(0, 1, 101)
    assert abs(entropy_rate_analytic(DensityFrame.from_values(unit, np.ones(unit.shape)), 1.0)) < 1e-6
    assert entropy_rate_analytic(std_normal, 1.0) == pytest.approx(-1.0, abs=1e-3)


def test_entropy_rate_matches_finite_differences():
    grid = DomainGrid.uniform(-12, 12, 1024)
    frames, _ = evolve(gauss(2.0, grid, -1.0), EvolutionSpec(1.0, -1.0, -0.6, 20))
    s = build_series(frames, 1.0)
    fd = fd_rate(s.times, s.channels["entropy"])
    rate = np.array(s.channels["entropy_rate_analytic"])
    assert np.all(np.diff(s.channels["entropy"]) < 0)
    assert np.abs(fd[1:-1] / rate[1:-1] - 1).max() < 0.02


def test_ols_slope():
    slope, rms = ols_slope([0, 1, 2], [1, 3, 5])
    assert slope == pytest.approx(2.0) and rms < 1e-12


def test_variance_trace_static_and_gaussian():
    grid = DomainGrid.uniform(-12, 12, 1024)
    fr = gauss(2.0, grid)
    static = variance_trace([fr.with_time(t) for t in (0.0, 1.0, 2.0)])
    assert abs(static.slopes[0]) < 1e-12
    frames, _ = evolve(gauss(2.0, grid, -1.0), EvolutionSpec(1.0, -1.0, -0.5, 10))
    assert variance_trace(frames).slopes[0] == pytest.approx(-2.0, rel=0.025)


def test_variance_trace_anisotropic_2d():
    grid = DomainGrid([(-12, 12), (-14, 14)], [128, 160])
    stamps = []
    for t in np.linspace(-1.5, -1.0, 6):
        vx, vy = -2 * t, -2 * t + 1.0
        x, y = grid.mesh()
        v = np.exp(-x**2 / (2 * vx) - y**2 / (2 * vy))
        stamps.append(DensityFrame.from_values(grid, v, t))
    np.testing.assert_allclose(variance_trace(stamps).slopes, [-2.0, -2.0], rtol=1e-3)


def _gauss_triplet(n, delta, a2=1.0, t=-0.75):
    grid = DomainGrid.uniform(-10, 10, n)
    f0, f1 = gauss(-2 * a2 * t, grid, t), gauss(-2 * a2 * (t + delta), grid, t + delta)
    mid = gauss(-2 * a2 * (t + delta / 2), grid, t + delta / 2)
    return f0, f1, mid


def test_conservation_residual_static():
    grid = DomainGrid.uniform(-10, 10, 201)
    fr = gauss(1.0, grid)
    zero = (np.zeros(grid.shape),)
    assert conservation_residual(fr, fr, zero, 0.01)[1] == 0


def test_conservation_residual_refines_and_detects_wrong_a2():
    sups = []
    for n, d in ((201, 0.02), (401, 0.01)):
        f0, f1, mid = _gauss_triplet(n, d)
        sups.append(conservation_residual(f0, f1, velocity_field(mid, 1.0), d)[1])
    assert sups[1] < sups[0] / 2
    f0, f1, mid = _gauss_triplet(401, 0.01)
    wrong = conservation_residual(f0, f1, velocity_field(mid, 2.0), 0.01)[1]
    assert wrong > 10 * sups[1]


def test_particle_pde_gap_identical_and_misaligned():
    grid = DomainGrid.uniform(-10, 10, 256)
    ens = ParticleEnsemble.sample(GaussianMixtureModel([1.0], [0.0], 1.0), 500, seed=1)
    k = KernelSpec("gaussian", 0.4)
    log = TrajectoryLog()
    log.record(ens.positions, None, -1.0)
    log.record(ens.positions, 0.0, -0.5)
    frames = [kde_estimate(ens, k, grid, t) for t in (-1.0, -0.5)]
    assert particle_pde_gap(log, frames, k) == [0.0, 0.0]
    with pytest.raises(TimeMisalignment):
        particle_pde_gap(log, [frames[0].with_time(-0.1)], k)


def test_series_csv_round_trip(tmp_path):
    grid = DomainGrid.uniform(-12, 12, 256)
    frames, _ = evolve(gauss(2.0, grid, -1.0), EvolutionSpec(1.0, -1.0, -0.5, 4))
    s = build_series(frames, 1.0, residuals=[0.1] * 5)
    p = tmp_path / "d.csv"
    s.to_csv(p)
    header = p.read_text().splitlines()[0]
    assert header == "time,entropy,entropy_rate_analytic,var_axis0,mass,residual,gap"
    back = DiagnosticSeries.from_csv(p)
    assert back.times == s.times
    assert back.channels["entropy"] == s.channels["entropy"]
    assert all(math.isnan(v) for v in back.channels["gap"])


def test_series_rejects_bad_mass():
    with pytest.raises(ValueError):
        DiagnosticSeries([0.0], {"mass": [0.9]}).check()
