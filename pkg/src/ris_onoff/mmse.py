"""Closed-form MMSE receive beamformers, normalized to unit norm.

For each user the optimal linear combiner is

    w_k  proportional to  (sum_i p_i x_i x_i^H + R_noise)^{-1} x_k,

where x_i is the cascaded channel of the active or passive surface and
R_noise is delta^2 I, plus sigma^2 H^H diag(|g|^2) H for the active RIS
(amplified thermal noise).  The inverse always exists thanks to the
delta^2 I regularization.  A dead channel (or p_k = 0) gives a zero
direction; we return the first canonical basis vector instead of raising
so alternating optimization never aborts mid-stream; the following power
update zeroes p_k anyway.
"""

import numpy as np

from . import models
from .numerics import solve_hpd
from .scenario import Scenario


def _mmse_from_cov(cov, x, p):
    K, M = x.shape
    w = np.empty((K, M), dtype=np.complex128)
    for k in range(K):
        direction = solve_hpd(cov, np.sqrt(p[k]) * x[k])
        nrm = np.linalg.norm(direction)
        if nrm < 1e-300:
            w[k] = 0.0
            w[k, 0] = 1.0
        else:
            w[k] = direction / nrm
    return w


def mmse_passive(scn: Scenario, p, beta, theta):
    """Unit-norm MMSE beamformers for the passive surface, (K, M)."""
    v = np.asarray(beta) * np.exp(1j * np.asarray(theta))
    x = models.cascaded_channels(scn, v)
    cov = (x.T * p) @ x.conj() + scn.delta2_w * np.eye(scn.M)
    return _mmse_from_cov(cov, x, np.asarray(p, dtype=float))


def mmse_active(scn: Scenario, p, alpha, rho, theta):
    """Active-RIS beamformers; the covariance gains the amplified-noise
    term sigma^2 H^H diag(alpha^2 rho^2) H."""
    g = np.asarray(alpha) * np.asarray(rho) * np.exp(1j * np.asarray(theta))
    x = models.cascaded_channels(scn, g)
    amp_cov = scn.sigma2_w * (scn.H.conj().T * (np.abs(g) ** 2)) @ scn.H
    cov = (x.T * p) @ x.conj() + amp_cov + scn.delta2_w * np.eye(scn.M)
    return _mmse_from_cov(cov, x, np.asarray(p, dtype=float))
