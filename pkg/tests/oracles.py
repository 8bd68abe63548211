"""Independent reference computations used by the tests.

Nothing here imports the package's numerics: each oracle recomputes its
quantity from first principles (finite differences, enumeration, closed
forms) so a shared bug cannot hide.
"""

import itertools
import math

import numpy as np


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def norm_relative_error(a, b):
    """``||a - b|| / (||a|| + ||b||)``, the usual gradient-check score for a whole array."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = np.linalg.norm(a) + np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / scale) if scale > 0 else 0.0


def reference_forward(weights, biases, x, activation):
    """Plain-loop MLP forward pass with a softmax head."""
    def act(v):
        if activation == "relu":
            return max(v, 0.0)
        return v if v > 0 else math.expm1(v)

    a = list(map(float, x))
    for layer, (w, b) in enumerate(zip(weights, biases)):
        z = [sum(a[i] * w[i][j] for i in range(len(a))) + b[j] for j in range(len(b))]
        a = z if layer == len(weights) - 1 else [act(v) for v in z]
    m = max(a)
    e = [math.exp(v - m) for v in a]
    s = sum(e)
    return [v / s for v in e]


def logistic_ce(w, b, x, y):
    """Two-class softmax cross-entropy of a linear model with weight matrix ``w`` (d x 2)."""
    z = [sum(xi * w[i][c] for i, xi in enumerate(x)) + b[c] for c in range(2)]
    m = max(z)
    log_norm = m + math.log(sum(math.exp(v - m) for v in z))
    return log_norm - z[y]


def best_single_insertion(w, b, x, y):
    """Loss-maximizing point among ``x`` and every single 0 -> 1 flip of ``x``.

    Returns ``(index or None, loss)``; ``None`` means no flip beats the clean point.
    """
    best_idx, best_loss = None, logistic_ce(w, b, x, y)
    for j, xj in enumerate(x):
        if xj == 0:
            flipped = list(x)
            flipped[j] = 1
            loss = logistic_ce(w, b, flipped, y)
            if loss > best_loss + 1e-12:
                best_idx, best_loss = j, loss
    return best_idx, best_loss


def t_half_width(scores, t_crit):
    n = len(scores)
    mean = sum(scores) / n
    var = sum((s - mean) ** 2 for s in scores) / (n - 1)
    return mean, t_crit * math.sqrt(var) / math.sqrt(n)


def gaussian_posterior_mean(x, mu, s, sigma):
    """E[clean | noisy = x] for clean ~ N(mu, s^2) and noise ~ N(0, sigma^2)."""
    return (s**2 * x + sigma**2 * mu) / (s**2 + sigma**2)


def confusion_f1(labels, preds, num_classes):
    """Per-class F1 from explicit counting."""
    out = []
    for c in range(num_classes):
        tp = sum(1 for t, p in zip(labels, preds) if t == c and p == c)
        fp = sum(1 for t, p in zip(labels, preds) if t != c and p == c)
        fn = sum(1 for t, p in zip(labels, preds) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return out


def all_binary_vectors(d):
    return [list(v) for v in itertools.product((0, 1), repeat=d)]
