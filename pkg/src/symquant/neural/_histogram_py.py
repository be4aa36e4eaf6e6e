"""Pure numpy histogram kernels (fallback for the compiled ``_histogram_cy``).

Shapes: ``x`` is ``(B, n, z)`` (bags, instances, features); ``mu`` and ``w``
are ``(z, N)``; the output is ``(B, z, N)``. ``variant`` codes: 0 hard,
1 soft, 2 softrbf, 3 sigmoid. For the soft variant ``w`` holds the slope.
"""
import numpy as np

LN101 = np.log(1.01)
SLOPE_MIN = 1e-6
BACKEND = "python"


def _phi(D, mu, w, variant, gamma):
    # D = v - mu, shape (n, z, N)
    if variant == 0:
        return ((w - np.abs(D)) > 0).astype(np.float64)
    if variant == 1:
        s = np.maximum(w, SLOPE_MIN)
        return np.maximum(0.0, 1.0 - s * np.abs(D))
    if variant == 2:
        u = D / w
        return np.exp(-u * u)
    if variant == 3:
        a = 1.0 / (1.0 + np.exp(np.clip(gamma * (D - 0.5 * w), -700, 700)))
        c = 1.0 - 1.0 / (1.0 + np.exp(np.clip(gamma * (D + 0.5 * w), -700, 700)))
        return a * c
    raise ValueError(f"unknown variant {variant}")


def hist_forward(x, mu, w, variant, gamma=100.0):
    B, n, z = x.shape
    out = np.empty((B, z, mu.shape[1]))
    for b in range(B):
        D = x[b][:, :, None] - mu[None, :, :]
        out[b] = _phi(D, mu, w, variant, gamma).mean(axis=0)
    return out


def hist_backward(x, mu, w, variant, gamma, gout):
    B, n, z = x.shape
    gx = np.zeros_like(x)
    gmu = np.zeros_like(mu)
    gw = np.zeros_like(w)
    for b in range(B):
        D = x[b][:, :, None] - mu[None, :, :]
        G = gout[b][None, :, :] / n
        sg = np.sign(D)
        if variant == 0:
            d = w - np.abs(D)
            # straight-through: the threshold passes gradients unchanged
            g = G * LN101 * np.exp(LN101 * np.minimum(d, 700.0))
            gw += g.sum(axis=0)
            gmu += (g * sg).sum(axis=0)
            gx[b] = -(g * sg).sum(axis=2)
        elif variant == 1:
            s = np.maximum(w, SLOPE_MIN)
            g = np.where(1.0 - s * np.abs(D) > 0, G, 0.0)
            gw += np.where(w > SLOPE_MIN, -(g * np.abs(D)).sum(axis=0), 0.0)
            gmu += (g * s * sg).sum(axis=0)
            gx[b] = -(g * s * sg).sum(axis=2)
        elif variant == 2:
            u = D / w
            g = G * np.exp(-u * u) * 2.0 * u / w
            gmu += g.sum(axis=0)
            gw += (g * u).sum(axis=0)
            gx[b] = -g.sum(axis=2)
        elif variant == 3:
            a = 1.0 / (1.0 + np.exp(np.clip(gamma * (D - 0.5 * w), -700, 700)))
            c = 1.0 - 1.0 / (1.0 + np.exp(np.clip(gamma * (D + 0.5 * w), -700, 700)))
            gx[b] = (G * gamma * a * c * (a - c)).sum(axis=2)
        else:
            raise ValueError(f"unknown variant {variant}")
    return gx, gmu, gw
