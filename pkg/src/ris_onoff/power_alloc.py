"""Closed-form KKT transmit-power updates plus projected-subgradient duals.

With the quadratic-transform auxiliaries (t, r) and multipliers held
fixed, the Lagrangian is concave in each p_k and its stationary point has
the closed form

    p_k = r_k^2 (1 + t_k) |w_k^H x_k|^2
          / (sum_i r_i^2 |w_i^H x_k|^2 + extra_k + Y_k)^2,

    Y_k = eta + lam_k + sum_{i != k} phi_i Rbar_i |w_i^H x_k|^2
          - phi_k |w_k^H x_k|^2,

where extra_k = (eta + kappa) ||A Lam Theta h_r,k||^2 for the active RIS
and 0 for the passive one.  The result is projected onto [0, P_max]: the
multipliers enforce the cap only asymptotically, projection keeps every
iterate feasible.  A nonpositive inner denominator means the stationarity
condition has no root and the objective is increasing in p_k, so the cap
is returned.  Multipliers follow a projected subgradient with diminishing
steps s_0 / sqrt(step).
"""

from dataclasses import dataclass

import numpy as np

from . import models
from .fp_core import FpState
from .scenario import Scenario

SUBGRAD_STEP0 = 0.1
DUAL_STEPS = 200


def _cross_gains(scn, st, mode):
    """A2[i, k] = |w_i^H x_k|^2 for the mode's cascaded channels x_k."""
    x = models.cascaded_channels(scn, st.reflection())
    cross = st.w.conj() @ x.T
    return np.abs(cross) ** 2


def _amp_gains(scn, st):
    """||A Lam Theta h_r,k||^2 per user."""
    g2 = np.abs(st.reflection()) ** 2
    return (np.abs(scn.h_r) ** 2) @ g2


def _update_power(scn, st, fp, extra):
    A2 = _cross_gains(scn, st, None)
    rbar = scn.rmin_bar
    r2 = fp.r ** 2
    K = scn.K
    p_new = np.empty(K)
    for k in range(K):
        own = A2[k, k]
        if own <= 0.0:
            p_new[k] = 0.0
            continue
        y_k = (fp.eta + fp.lam[k]
               + rbar * (fp.phi @ A2[:, k] - fp.phi[k] * own)
               - fp.phi[k] * own)
        inner = r2 @ A2[:, k] + extra[k] + y_k
        if inner <= 0.0:
            p_new[k] = scn.pmax_user_w
            continue
        p_new[k] = fp.r[k] ** 2 * (1.0 + fp.t[k]) * own / inner ** 2
    return np.clip(p_new, 0.0, scn.pmax_user_w)


def update_power_passive(scn: Scenario, st, fp: FpState):
    return _update_power(scn, st, fp, np.zeros(scn.K))


def update_power_active(scn: Scenario, st, fp: FpState):
    extra = (fp.eta + fp.kappa) * _amp_gains(scn, st)
    return _update_power(scn, st, fp, extra)


@dataclass
class DualResiduals:
    """Constraint slacks feeding the subgradient step (>= 0 means slack)."""

    power: np.ndarray          # P_max - p_k
    rate_sinr: np.ndarray      # p_k |w_k x_k|^2 - Rbar * (interference + noise)
    amp: float | None = None   # P_RIS_max - amplification power


def dual_residuals(scn, st, mode) -> DualResiduals:
    A2 = _cross_gains(scn, st, mode)
    received = A2 * st.p[np.newaxis, :]       # received[k, i] = p_i |w_k x_i|^2
    own = np.diag(received)
    noise = np.full(scn.K, scn.delta2_w)
    if mode == "active":
        g2 = np.abs(st.reflection()) ** 2
        noise = noise + scn.sigma2_w * (models.bs_side_gains(scn, st.w) * g2).sum(axis=1)
    interference = received.sum(axis=1) - own
    rate_slack = own - scn.rmin_bar * (interference + noise)
    amp = scn.pmax_ris_w - models.amp_power(scn, st) if mode == "active" else None
    return DualResiduals(scn.pmax_user_w - st.p, rate_slack, amp)


def update_multipliers(fp: FpState, residuals: DualResiduals, step) -> FpState:
    """One projected subgradient step, s = s0/sqrt(step), step counted from 1."""
    s = SUBGRAD_STEP0 / np.sqrt(float(step))
    out = fp.copy()
    out.lam = np.maximum(0.0, fp.lam - s * residuals.power)
    out.phi = np.maximum(0.0, fp.phi - s * residuals.rate_sinr)
    if residuals.amp is not None:
        out.kappa = max(0.0, fp.kappa - s * residuals.amp)
    return out


def dual_power_update(scn, st, fp, mode, steps=DUAL_STEPS, refresh_aux=True):
    """Alternate the closed-form power with multiplier steps.

    With refresh_aux the quadratic-transform auxiliaries t and r are
    refreshed from the moving powers each step, so the block converges to
    the joint KKT point of (t, r, p, duals) instead of the one-step
    surrogate optimum (the closed forms alone move p only by a factor of
    about 1 + 1/SINR per refresh).  Returns (p, fp); st is not modified.
    """
    from . import fp_core

    work = st.copy()
    for step in range(1, steps + 1):
        if refresh_aux:
            fp.t = fp_core.update_t(scn, work, mode)
            fp.r = fp_core.update_r(scn, work, fp.t, mode)
        if mode == "passive":
            work.p = update_power_passive(scn, work, fp)
        else:
            work.p = update_power_active(scn, work, fp)
        fp = update_multipliers(fp, dual_residuals(scn, work, mode), step)
    return work.p, fp
