"""Constrained <-> unconstrained parameter transforms with log-Jacobians.

Three bijections are used by the models:

* positive scalar: sigma = exp(z), log-Jacobian z
* probability simplex: stick-breaking of C-1 logits (zero logits map to the
  uniform simplex)
* ordered vector: mu_1 = z_1, mu_k = mu_{k-1} + exp(z_k)

Each forward map returns its log-Jacobian; backward helpers push gradients
w.r.t. the constrained output back to the unconstrained input.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logit


def log1mexp(t: np.ndarray | float) -> np.ndarray | float:
    """Stable log(1 - exp(-t)) for t > 0.

    Uses log(-expm1(-t)) below ln 2 and log1p(-exp(-t)) above, which keeps
    full precision for t from 1e-12 up to overflow territory.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("log1mexp requires strictly positive argument")
    small = t < np.log(2.0)
    out = np.empty_like(t)
    out[small] = np.log(-np.expm1(-t[small]))
    out[~small] = np.log1p(-np.exp(-t[~small]))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# stick-breaking simplex transform
# ---------------------------------------------------------------------------

def _stick_offsets(n_logits: int) -> np.ndarray:
    # offset makes the zero vector map to the uniform simplex
    c = n_logits + 1
    return np.log(np.arange(c - 1, 0, -1, dtype=float))


def stick_breaking_forward(w: np.ndarray) -> tuple[np.ndarray, float]:
    """Map C-1 logits to a C-simplex; returns (pi, log|J|)."""
    w = np.asarray(w, dtype=float)
    c = w.size + 1
    v = expit(w - _stick_offsets(w.size))
    pi = np.empty(c)
    logjac = 0.0
    remaining = 1.0
    for k in range(c - 1):
        pi[k] = remaining * v[k]
        logjac += np.log(v[k]) + np.log1p(-v[k]) + np.log(remaining)
        remaining *= 1.0 - v[k]
    pi[c - 1] = remaining
    return pi, float(logjac)


def stick_breaking_inverse(pi: np.ndarray) -> np.ndarray:
    """Recover the C-1 logits of a point on the C-simplex."""
    pi = np.asarray(pi, dtype=float)
    c = pi.size
    w = np.empty(c - 1)
    remaining = 1.0
    offsets = _stick_offsets(c - 1)
    for k in range(c - 1):
        v = pi[k] / remaining
        w[k] = logit(v) + offsets[k]
        remaining -= pi[k]
    return w


def stick_breaking_backward(w: np.ndarray, grad_pi: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. pi back to the stick logits w.

    Does not include the log-Jacobian term; see
    stick_breaking_logjac_grad.
    """
    w = np.asarray(w, dtype=float)
    grad_pi = np.asarray(grad_pi, dtype=float)
    n = w.size
    v = expit(w - _stick_offsets(n))
    # recompute stick lengths before each break
    rem = np.empty(n)
    r = 1.0
    for k in range(n):
        rem[k] = r
        r *= 1.0 - v[k]
    grad_w = np.empty(n)
    a_r = grad_pi[n]  # adjoint of the final remaining stick
    for k in range(n - 1, -1, -1):
        a_v = grad_pi[k] * rem[k] - a_r * rem[k]
        a_r = grad_pi[k] * v[k] + a_r * (1.0 - v[k])
        grad_w[k] = a_v * v[k] * (1.0 - v[k])
    return grad_w


def stick_breaking_logjac_grad(w: np.ndarray) -> np.ndarray:
    """Gradient of the stick-breaking log-Jacobian w.r.t. the logits."""
    w = np.asarray(w, dtype=float)
    n = w.size
    v = expit(w - _stick_offsets(n))
    k = np.arange(n)
    # d logjac / dv_k = 1/v_k - (n - k)/(1 - v_k); chain through dv/dw
    return (1.0 - v) - (n - k) * v


# ---------------------------------------------------------------------------
# ordered vector transform
# ---------------------------------------------------------------------------

def ordered_forward(z: np.ndarray) -> tuple[np.ndarray, float]:
    """Map raw reals to a strictly increasing vector; returns (mu, log|J|)."""
    z = np.asarray(z, dtype=float)
    mu = np.empty_like(z)
    mu[0] = z[0]
    if z.size > 1:
        mu[1:] = z[0] + np.cumsum(np.exp(z[1:]))
    return mu, float(np.sum(z[1:]))


def ordered_inverse(mu: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if np.any(np.diff(mu) <= 0):
        raise ValueError("ordered_inverse requires strictly increasing input")
    z = np.empty_like(mu)
    z[0] = mu[0]
    z[1:] = np.log(np.diff(mu))
    return z


def ordered_backward(z: np.ndarray, grad_mu: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. mu back to the raw vector z (no Jacobian term)."""
    z = np.asarray(z, dtype=float)
    grad_mu = np.asarray(grad_mu, dtype=float)
    # mu_k depends on z_0 and on z_j (j>=1) through exp(z_j) for j <= k
    tail = np.cumsum(grad_mu[::-1])[::-1]
    grad_z = np.empty_like(z)
    grad_z[0] = tail[0]
    grad_z[1:] = np.exp(z[1:]) * tail[1:]
    return grad_z
