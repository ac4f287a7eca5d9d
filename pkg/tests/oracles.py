"""Independent reference implementations used only by the test suite.

These deliberately avoid the package's code paths (plain loops, direct
formulas, hand-rolled FFT bookkeeping) so agreement is meaningful.
"""

from __future__ import annotations

import math
import statistics

import numpy as np


def naive_time_domain(ibi: list[float]) -> dict[str, float]:
    k = len(ibi)
    mean_nn = sum(ibi) / k
    sdnn = math.sqrt(sum((v - mean_nn) ** 2 for v in ibi) / k)
    diffs = [ibi[i + 1] - ibi[i] for i in range(k - 1)]
    rmssd = math.sqrt(sum(d * d for d in diffs) / len(diffs)) if diffs else 0.0
    dmean = sum(diffs) / len(diffs) if diffs else 0.0
    sdsd = math.sqrt(sum((d - dmean) ** 2 for d in diffs) / len(diffs)) if diffs else 0.0
    pnn50 = 100.0 * sum(1 for d in diffs if abs(d) > 50.0) / len(diffs) if diffs else 0.0
    pnn20 = 100.0 * sum(1 for d in diffs if abs(d) > 20.0) / len(diffs) if diffs else 0.0
    hr = [60000.0 / v for v in ibi]
    hr_mean = sum(hr) / k
    std_hr = math.sqrt(sum((v - hr_mean) ** 2 for v in hr) / k)
    # histogram with 7.8125 ms bins anchored at a bin-width multiple
    width = 7.8125
    lo = math.floor(min(ibi) / width) * width
    counts: dict[int, int] = {}
    for v in ibi:
        b = int((v - lo) // width)
        counts[b] = counts.get(b, 0) + 1
    tri = k / max(counts.values())
    return {
        "MEAN_NN": mean_nn,
        "MEDIAN_NN": statistics.median(ibi),
        "SDNN": sdnn,
        "RMSSD": rmssd,
        "SDSD": sdsd,
        "PNN50": pnn50,
        "PNN20": pnn20,
        "CVNN": sdnn / mean_nn,
        "MEAN_HR": hr_mean,
        "MIN_HR": min(hr),
        "MAX_HR": max(hr),
        "STD_HR": std_hr,
        "TRI_INDEX": tri,
    }


def naive_poincare(ibi: list[float]) -> dict[str, float]:
    diffs = [ibi[i + 1] - ibi[i] for i in range(len(ibi) - 1)]
    dmean = sum(diffs) / len(diffs)
    var_d = sum((d - dmean) ** 2 for d in diffs) / len(diffs)
    sd1 = math.sqrt(var_d / 2.0)
    mean_nn = sum(ibi) / len(ibi)
    sdnn2 = sum((v - mean_nn) ** 2 for v in ibi) / len(ibi)
    sd2 = math.sqrt(max(0.0, 2.0 * sdnn2 - sd1 * sd1))
    return {"SD1": sd1, "SD2": sd2, "SD1_SD2": sd1 / sd2 if sd2 > 0 else 0.0}


def naive_welch_psd(x: np.ndarray, fs: float, nperseg: int) -> tuple[np.ndarray, np.ndarray]:
    """Hann-tapered, 50%-overlap, per-segment linearly detrended periodogram
    average (one-sided density scaling)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    nperseg = min(nperseg, n)
    step = nperseg - nperseg // 2
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(nperseg) / nperseg)  # periodic hann
    norm = fs * float(np.sum(win**2))
    segments = []
    start = 0
    while start + nperseg <= n:
        seg = x[start : start + nperseg].copy()
        t = np.arange(nperseg, dtype=np.float64)
        a, b = np.polyfit(t, seg, 1)
        seg = seg - (a * t + b)
        spec = np.fft.rfft(seg * win)
        p = (spec.real**2 + spec.imag**2) / norm
        p[1:] *= 2.0
        if nperseg % 2 == 0:
            p[-1] /= 2.0
        segments.append(p)
        start += step
    psd = np.mean(segments, axis=0)
    freqs = np.arange(psd.size) * fs / nperseg
    return freqs, psd


def naive_band_power(freqs: np.ndarray, psd: np.ndarray, lo: float, hi: float) -> float:
    df = freqs[1] - freqs[0]
    total = 0.0
    for f, p in zip(freqs, psd):
        if lo <= f < hi:
            total += p * df
    return total


def naive_tree_predict(tree, x: np.ndarray) -> np.ndarray:
    """Walk one tree's flat arrays for a single row."""
    node = 0
    while tree.feature[node] >= 0:
        if x[tree.feature[node]] <= tree.threshold[node]:
            node = int(tree.left[node])
        else:
            node = int(tree.right[node])
    return tree.leaf_value[node]


def naive_ensemble_regress(model, X: np.ndarray) -> np.ndarray:
    out = []
    wsum = float(sum(model.tree_weights))
    for row in X:
        acc = 0.0
        for tree, w in zip(model.trees, model.tree_weights):
            acc += w * float(naive_tree_predict(tree, row)[0])
        out.append(acc / wsum)
    return np.array(out)


def naive_ensemble_classify(model, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    wsum = float(sum(model.tree_weights))
    labels, probs = [], []
    for row in X:
        acc = np.zeros(model.n_classes)
        for tree, w in zip(model.trees, model.tree_weights):
            acc += w * naive_tree_predict(tree, row)
        p = acc / wsum
        p = p / p.sum()
        labels.append(model.class_codes[int(np.argmax(p))])
        probs.append(p)
    return np.array(labels), np.array(probs)


def brute_force_min_power(actuators, current: float, target: float) -> tuple[float, bool]:
    """Minimum total power meeting the comfort target, by full enumeration.

    Returns (best_power, reachable). Comfort after actuation is clamped to
    [1, 10] before the comparison, mirroring the planner's contract.
    """
    import itertools

    best = None
    for combo in itertools.product(*[range(len(a.power_w)) for a in actuators]):
        power = sum(a.power_w[lvl] for a, lvl in zip(actuators, combo))
        after = current + sum(a.comfort_delta[lvl] for a, lvl in zip(actuators, combo))
        after = min(10.0, max(1.0, after))
        if after >= target:
            if best is None or power < best:
                best = power
    if best is None:
        return (sum(a.power_w[-1] for a in actuators), False)
    return (best, True)
