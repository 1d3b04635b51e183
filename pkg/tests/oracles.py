"""Independent reference implementations used as test oracles."""

import math

import torch


def central_difference_check(loss_fn, params, h=1e-6, max_elements=None):
    """Max relative error between autograd and central differences.

    ``loss_fn()`` must return a scalar double tensor depending on ``params``.
    Relative error per tensor is ||g_auto - g_fd|| / max(||g_fd||, 1e-12).
    """
    loss = loss_fn()
    auto = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, auto):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            n = flat.numel() if max_elements is None else min(flat.numel(), max_elements)
            numeric = torch.zeros(n, dtype=torch.float64)
            for k in range(n):
                orig = flat[k].item()
                flat[k] = orig + h
                up = loss_fn().item()
                flat[k] = orig - h
                down = loss_fn().item()
                flat[k] = orig
                numeric[k] = (up - down) / (2 * h)
            analytic = g.reshape(-1)[:n].double()
            denom = max(numeric.norm().item(), 1e-12)
            if numeric.norm().item() < 1e-10 and analytic.norm().item() < 1e-10:
                continue
            worst = max(worst, (analytic - numeric).norm().item() / denom)
    return worst


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_lstm(x, h, c, weight, bias):
    """One LSTM step on plain Python lists; weight rows ordered (i, f, o, g)."""
    z = list(x) + list(h)
    hidden = len(h)
    pre = [sum(weight[r][j] * z[j] for j in range(len(z))) + bias[r] for r in range(4 * hidden)]
    new_h, new_c = [], []
    for k in range(hidden):
        i = sigmoid(pre[k])
        f = sigmoid(pre[hidden + k])
        o = sigmoid(pre[2 * hidden + k])
        g = math.tanh(pre[3 * hidden + k])
        ck = f * c[k] + i * g
        new_c.append(ck)
        new_h.append(o * math.tanh(ck))
    return new_h, new_c


def adamax_reference(theta, grads, lr, beta1=0.9, beta2=0.999, floor=1e-12):
    """Scalar AdaMax trajectory written from the textbook update."""
    m = u = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        u = max(beta2 * u, abs(g))
        theta = theta - (lr / (1 - beta1 ** t)) * m / max(u, floor)
        out.append(theta)
    return out


def charbonnier_loop(a, b, eps):
    """Mean of sqrt(d^2 + eps^2) over a nested-list frame."""
    total, n = 0.0, 0
    flat_a, flat_b = a.reshape(-1).tolist(), b.reshape(-1).tolist()
    for x, y in zip(flat_a, flat_b):
        total += math.sqrt((x - y) ** 2 + eps * eps)
        n += 1
    return total / n
