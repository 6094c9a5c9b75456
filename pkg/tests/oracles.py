"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the package's numeric code; each function is written
straight from the definition it checks.
"""
import math

import numpy as np


def naive_cosine(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def naive_burst(r, alpha, beta, gamma):
    return [alpha * abs(row[0]) + beta * abs(row[1]) + gamma * (abs(row[2]) + abs(row[3]))
            for row in r]


def naive_resonance(Us, Bs, Ut, Bt, delta):
    R = np.zeros((len(Us), len(Ut)))
    for i in range(len(Us)):
        for j in range(len(Ut)):
            R[i, j] = math.exp(-delta * (Bs[i] - Bt[j]) ** 2) * naive_cosine(Us[i], Ut[j])
    return R


def naive_align(R):
    out = []
    for row in R:
        best, k = -math.inf, 0
        for j, x in enumerate(row):
            if x > best:
                best, k = x, j
        out.append(k)
    return out


def naive_irf(R):
    return sum(max(row) for row in R) / len(R)


def naive_dct2_ortho(x):
    N = len(x)
    out = []
    for k in range(N):
        s = sum(x[n] * math.cos(math.pi * k * (2 * n + 1) / (2 * N)) for n in range(N))
        scale = math.sqrt(1.0 / N) if k == 0 else math.sqrt(2.0 / N)
        out.append(scale * s)
    return out


def naive_mel_filters(sr, n_fft, n_mels, fmin, fmax):
    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    lo, hi = mel(fmin), mel(fmax)
    edges = [hz(lo + (hi - lo) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    n_bins = n_fft // 2 + 1
    fb = [[0.0] * n_bins for _ in range(n_mels)]
    for m in range(n_mels):
        left, centre, right = edges[m], edges[m + 1], edges[m + 2]
        for k in range(n_bins):
            f = k * sr / n_fft
            if left < f <= centre:
                fb[m][k] = (f - left) / (centre - left)
            elif centre < f < right:
                fb[m][k] = (right - f) / (right - centre)
    return fb


def naive_mfcc(frame, sr, n_mels=40, n_fft=512, index=2, floor=1e-10):
    """Hann window, |DFT|^2 by direct summation, mel energies, log, DCT-II."""
    N = len(frame)
    win = [0.5 - 0.5 * math.cos(2 * math.pi * n / (N - 1)) for n in range(N)] if N > 1 else [1.0]
    x = [frame[n] * win[n] for n in range(N)] + [0.0] * max(0, n_fft - N)
    x = x[:n_fft]
    power = []
    for k in range(n_fft // 2 + 1):
        re = sum(x[n] * math.cos(2 * math.pi * k * n / n_fft) for n in range(n_fft))
        im = -sum(x[n] * math.sin(2 * math.pi * k * n / n_fft) for n in range(n_fft))
        power.append(re * re + im * im)
    fb = naive_mel_filters(sr, n_fft, n_mels, 0.0, sr / 2.0)
    log_mel = [math.log(max(sum(w * p for w, p in zip(row, power)), floor)) for row in fb]
    return naive_dct2_ortho(log_mel)[index]


def confusion_uar(y_true, y_pred, n_classes):
    """Per-class recall by counting, then the mean over classes that occur."""
    counts = [[0] * n_classes for _ in range(n_classes)]
    for t, p in zip(y_true, y_pred):
        counts[t][p] += 1
    recalls = []
    for c in range(n_classes):
        support = sum(counts[c])
        if support:
            recalls.append(counts[c][c] / support)
    return sum(recalls) / len(recalls), recalls


def eig_pca(X, k=2):
    """Top-k principal scores from an eigendecomposition of the covariance."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    vals, vecs = np.linalg.eigh(Xc.T @ Xc)
    order = np.argsort(vals)[::-1][:k]
    return Xc @ vecs[:, order]
