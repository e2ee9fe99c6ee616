"""Hot inner loops: kernel sums over particle ensembles.

Each public function dispatches to a numba-compiled loop or a chunked numpy
implementation depending on :func:`mslab._accel.backend`.  Both paths
accumulate every output independently, so results do not depend on thread
count.
"""

import math

import numpy as np

from . import _accel

GAUSSIAN = 0
FLAT_BALL = 1

_KIND_CODES = {"gaussian": GAUSSIAN, "flat-ball": FLAT_BALL}

# numpy path works on blocks of queries so the pairwise block stays below this
_BLOCK_ELEMS = 2_000_000


def kind_code(kind):
    try:
        return _KIND_CODES[kind]
    except KeyError:
        raise ValueError(f"unknown kernel kind {kind!r}") from None


def ball_volume(n, radius):
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * radius**n


# --------------------------------------------------------------------------
# kernel density sums


@_accel.njit
def _kde_numba(points, samples, weights, bandwidth, kind):
    m, n = points.shape
    out = np.zeros(m)
    for i in range(m):
        acc = 0.0
        for j in range(samples.shape[0]):
            r2 = 0.0
            for k in range(n):
                z = (points[i, k] - samples[j, k]) / bandwidth[k]
                r2 += z * z
            if kind == 0:
                acc += weights[j] * math.exp(-0.5 * r2)
            elif r2 <= 1.0:
                acc += weights[j]
        out[i] = acc
    return out


def _kde_numpy(points, samples, weights, bandwidth, kind):
    m = points.shape[0]
    out = np.empty(m)
    step = max(1, _BLOCK_ELEMS // max(1, samples.shape[0]))
    zs = samples / bandwidth
    for lo in range(0, m, step):
        zp = points[lo : lo + step] / bandwidth
        r2 = ((zp[:, None, :] - zs[None, :, :]) ** 2).sum(axis=2)
        if kind == GAUSSIAN:
            k = np.exp(-0.5 * r2)
        else:
            k = (r2 <= 1.0).astype(float)
        out[lo : lo + step] = k @ weights
    return out


def kde_sum(points, samples, weights, bandwidth, kind):
    """Normalized kernel density of weighted ``samples`` at ``points``.

    ``bandwidth`` is per axis for the gaussian kernel; the flat-ball kernel uses
    ``bandwidth[0]`` as the ball radius.
    """
    points = np.ascontiguousarray(points, dtype=float)
    samples = np.ascontiguousarray(samples, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    n = samples.shape[1]
    bw = np.ascontiguousarray(np.broadcast_to(np.asarray(bandwidth, float), (n,)))
    if kind == FLAT_BALL:
        bw = np.full(n, bw[0])
    fn = _kde_numba if _accel.backend() == "numba" else _kde_numpy
    raw = fn(points, samples, weights, bw, kind)
    if kind == GAUSSIAN:
        norm = (2 * math.pi) ** (-n / 2) / float(np.prod(bw))
    else:
        norm = 1.0 / ball_volume(n, bw[0])
    return raw * norm / weights.sum()


# --------------------------------------------------------------------------
# mean-shift map


@_accel.njit
def _shift_numba(queries, samples, weights, bandwidth, kind):
    m, n = queries.shape
    out = np.empty((m, n))
    den = np.zeros(m)
    for i in range(m):
        # shift exponents by the nearest sample so far-away queries do not underflow
        r2min = np.inf
        if kind == 0:
            for j in range(samples.shape[0]):
                if weights[j] > 0.0:
                    r2 = 0.0
                    for k in range(n):
                        z = queries[i, k] - samples[j, k]
                        r2 += z * z
                    if r2 < r2min:
                        r2min = r2
        acc = np.zeros(n)
        tot = 0.0
        for j in range(samples.shape[0]):
            r2 = 0.0
            for k in range(n):
                z = queries[i, k] - samples[j, k]
                r2 += z * z
            if kind == 0:
                kw = weights[j] * math.exp(-0.5 * (r2 - r2min) / (bandwidth * bandwidth))
            elif r2 <= bandwidth * bandwidth:
                kw = weights[j]
            else:
                kw = 0.0
            tot += kw
            for k in range(n):
                acc[k] += kw * samples[j, k]
        den[i] = tot
        for k in range(n):
            out[i, k] = acc[k] / tot if tot > 0.0 else np.nan
    return out, den


def _shift_numpy(queries, samples, weights, bandwidth, kind):
    m, n = queries.shape
    out = np.empty((m, n))
    den = np.empty(m)
    step = max(1, _BLOCK_ELEMS // max(1, samples.shape[0]))
    for lo in range(0, m, step):
        q = queries[lo : lo + step]
        r2 = ((q[:, None, :] - samples[None, :, :]) ** 2).sum(axis=2)
        if kind == GAUSSIAN:
            masked = np.where(weights[None, :] > 0, r2, np.inf)
            r2 = r2 - masked.min(axis=1, keepdims=True)
            k = weights[None, :] * np.exp(-0.5 * r2 / bandwidth**2)
        else:
            k = np.where(r2 <= bandwidth**2, weights[None, :], 0.0)
        tot = k.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[lo : lo + step] = (k @ samples) / tot[:, None]
        den[lo : lo + step] = tot
    return out, den


def shift_points(queries, samples, weights, bandwidth, kind):
    """Kernel-weighted means of ``samples`` around each query.

    Returns ``(means, denominators)``; rows with a zero denominator are NaN.
    Gaussian denominators are relative to the nearest sample's weight, so only
    their sign is meaningful.
    """
    queries = np.ascontiguousarray(queries, dtype=float)
    samples = np.ascontiguousarray(samples, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    fn = _shift_numba if _accel.backend() == "numba" else _shift_numpy
    return fn(queries, samples, weights, float(bandwidth), kind)
