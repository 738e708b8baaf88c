"""Fractional-programming scaffolding shared by both solvers.

Two layers: a Dinkelbach ratio eta turning sum_rate / total_power into the
parametrized difference sum_rate - eta * total_power, and the quadratic
transform replacing each log-SINR with auxiliaries (t_k, r_k) that have
closed-form optima

    t_k = gamma_k,
    r_k = sqrt((1 + t_k) p_k |w_k^H x_k|^2) / (sum_i p_i |w_k^H x_i|^2 + noise).

Rates are reported in bits/s/Hz while the transform identity

    ln(1 + gamma) = max_t [ln(1 + t) - t + (1 + t) gamma / (1 + gamma)]

lives in nats, so the surrogate scales the (-t + f) block by 1/ln(2).  That
keeps three things true at once: t_k = gamma_k is stationary, r_k above is
stationary, and at both optima the surrogate collapses to
sum_k log2(1 + gamma_k) - eta * P_tot exactly.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import models
from .scenario import Scenario

LN2 = math.log(2.0)


class FpError(ValueError):
    pass


@dataclass
class FpState:
    """Auxiliaries and dual variables owned by one solver run.

    eta is the Dinkelbach ratio in bits/Hz/Joule.  lam, phi, kappa are the
    nonnegative multipliers of the power cap, the minimum-SINR constraint,
    and (active only) the amplification budget.
    """

    t: np.ndarray
    r: np.ndarray
    eta: float = 0.0
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kappa: float = 0.0

    @classmethod
    def zeros(cls, K):
        return cls(t=np.zeros(K), r=np.zeros(K), eta=0.0,
                   lam=np.zeros(K), phi=np.zeros(K), kappa=0.0)

    def copy(self):
        return replace(self, t=self.t.copy(), r=self.r.copy(),
                       lam=self.lam.copy(), phi=self.phi.copy())


def _mode_terms(scn: Scenario, st, mode):
    """Per-user pieces shared by the closed forms.

    Returns (own, denom) where own_k = p_k |w_k^H x_k|^2 and denom_k is the
    full received power at combiner k plus every noise term (the SINR of
    user k is own_k / (denom_k - own_k))."""
    if mode == "passive":
        g = st.reflection()
        S = models._link_powers(scn, st, g)
        denom = S.sum(axis=1) + scn.delta2_w
    elif mode == "active":
        g = st.reflection()
        S = models._link_powers(scn, st, g)
        amp = scn.sigma2_w * (models.bs_side_gains(scn, st.w) * np.abs(g) ** 2).sum(axis=1)
        denom = S.sum(axis=1) + amp + scn.delta2_w
    else:
        raise FpError(f"unknown mode {mode!r}")
    return np.diag(S).copy(), denom


def update_t(scn, st, mode):
    """Optimal SINR auxiliaries: t_k = gamma_k, clamped at zero."""
    own, denom = _mode_terms(scn, st, mode)
    return np.maximum(own / (denom - own), 0.0)


def update_r(scn, st, t, mode):
    """Optimal ratio auxiliaries given t (typically fresh from update_t)."""
    own, denom = _mode_terms(scn, st, mode)
    return np.sqrt((1.0 + t) * own) / denom


def f_terms(scn, st, fp, mode):
    """Quadratic-transform terms 2 r sqrt((1+t) own) - r^2 * denom, per user."""
    own, denom = _mode_terms(scn, st, mode)
    return 2.0 * fp.r * np.sqrt((1.0 + fp.t) * own) - fp.r ** 2 * denom


def surrogate_ee(scn, st, fp: FpState, mode):
    """Dinkelbach surrogate in bits:

        sum log2(1 + t) + (1/ln 2) (sum f - sum t) - eta * P_tot.

    Tight (equal to sum_k log2(1 + gamma_k) - eta * P_tot) at the
    closed-form t and r.
    """
    total = (models.power_total_passive(scn, st) if mode == "passive"
             else models.power_total_active(scn, st))
    f = f_terms(scn, st, fp, mode)
    return float(np.log2(1.0 + fp.t).sum()
                 + (f.sum() - fp.t.sum()) / LN2
                 - fp.eta * total)


def update_eta(sum_rate, total_power):
    """Dinkelbach ratio refresh."""
    if total_power <= 0:
        raise FpError(f"total power must be positive, got {total_power}")
    return float(sum_rate) / float(total_power)
