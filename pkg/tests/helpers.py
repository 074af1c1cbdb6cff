"""Independent reference implementations used as oracles by the tests.

Everything here is written the slow, obvious way (scalar loops, direct
formulas) precisely so it shares no code with the package under test.
"""

import math

import numpy as np


def conv1d_naive(x_pad, w, bias):
    """Scalar triple-loop cross-correlation.

    Accumulates bias first, then input*weight terms with the channel
    index outer and the tap index inner, one rounding per add, which is
    the documented kernel contract.
    """
    b, cin, lp = x_pad.shape
    cout, _, k = w.shape
    lout = lp - k + 1
    out = np.empty((b, cout, lout), dtype=np.float64)
    for bi in range(b):
        for o in range(cout):
            for pos in range(lout):
                acc = float(bias[o])
                for c in range(cin):
                    for t in range(k):
                        acc = acc + float(x_pad[bi, c, t + pos]) * float(w[o, c, t])
                out[bi, o, pos] = acc
    return out


def adam_scalar_trajectory(theta, grads, lr=1e-3, b1=0.9, b2=0.999,
                           eps=1e-8):
    """Plain scalar Adam (no weight decay); returns theta after each step."""
    m = 0.0
    v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(theta)
    return out


def confusion_brute(y_true, y_pred, num_classes=3):
    counts = [[0] * num_classes for _ in range(num_classes)]
    for yt, yp in zip(y_true, y_pred):
        counts[int(yt)][int(yp)] += 1
    return counts


def accuracy_brute(y_true, y_pred):
    correct = sum(1 for yt, yp in zip(y_true, y_pred) if int(yt) == int(yp))
    return correct / len(y_true)


def macro_f1_brute(y_true, y_pred, num_classes=3):
    total = 0.0
    for c in range(num_classes):
        tp = sum(1 for yt, yp in zip(y_true, y_pred)
                 if int(yt) == c and int(yp) == c)
        pred_c = sum(1 for yp in y_pred if int(yp) == c)
        true_c = sum(1 for yt in y_true if int(yt) == c)
        precision = tp / pred_c if pred_c else 0.0
        recall = tp / true_c if true_c else 0.0
        if precision + recall > 0:
            total += 2.0 * precision * recall / (precision + recall)
    return total / num_classes


def mean_sd_two_pass(values):
    """Mean and sample SD computed the textbook two-pass way."""
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, None
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def centroid_accuracy(train_windows, test_windows, num_classes=3):
    """Nearest-centroid classification on flattened window signals."""
    sums = [None] * num_classes
    counts = [0] * num_classes
    for w in train_windows:
        c = int(w.label)
        flat = np.asarray(w.signal, dtype=np.float64).ravel()
        sums[c] = flat.copy() if sums[c] is None else sums[c] + flat
        counts[c] += 1
    centroids = [sums[c] / counts[c] for c in range(num_classes)]
    correct = 0
    for w in test_windows:
        flat = np.asarray(w.signal, dtype=np.float64).ravel()
        dists = [float(((flat - c) ** 2).sum()) for c in centroids]
        if dists.index(min(dists)) == int(w.label):
            correct += 1
    return correct / len(test_windows)


def expected_window_count(n, window=64, stride=32):
    """Window count for a homogeneous run of n samples."""
    if n < window:
        return 0
    return (n - window) // stride + 1
