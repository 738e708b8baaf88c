"""SINR, rate, power, and energy-efficiency evaluation for both RIS types.

Everything here works in watts and bits/s/Hz on plain numpy arrays; dBm
exists only at the configuration boundary.  These are the ground-truth
expressions that every solver surrogate is checked against.

Passive reflection: diag(beta * exp(j*theta)); cascaded channel of user k
seen at the BS is H^H diag(v) h_r[k].  Active reflection additionally
amplifies (rho) and injects thermal noise sigma^2 per element.
"""

from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario


class ModelError(ValueError):
    """Invalid state passed to a model evaluation."""


@dataclass
class PassiveState:
    """Candidate passive solution: phases, on-off bits, beamformers, powers."""

    theta: np.ndarray  # (N,) radians
    beta: np.ndarray   # (N,) in {0, 1}
    w: np.ndarray      # (K, M) unit-norm rows
    p: np.ndarray      # (K,) watts

    def reflection(self):
        """beta_n * exp(j theta_n)."""
        return self.beta * np.exp(1j * self.theta)

    def copy(self):
        return PassiveState(self.theta.copy(), self.beta.copy(),
                            self.w.copy(), self.p.copy())


@dataclass
class ActiveState:
    """Candidate active solution; rho is the per-element amplification."""

    theta: np.ndarray
    alpha: np.ndarray  # (N,) in {0, 1}
    rho: np.ndarray    # (N,) >= 0
    w: np.ndarray
    p: np.ndarray

    def reflection(self):
        """alpha_n * rho_n * exp(j theta_n)."""
        return self.alpha * self.rho * np.exp(1j * self.theta)

    def copy(self):
        return ActiveState(self.theta.copy(), self.alpha.copy(),
                           self.rho.copy(), self.w.copy(), self.p.copy())


def validate_state(st, atol=1e-9):
    norms = np.linalg.norm(st.w, axis=1)
    if np.any(np.abs(norms - 1.0) > atol):
        raise ModelError(f"beamformers must be unit norm, got norms {norms}")
    if np.any(st.p < -atol):
        raise ModelError(f"negative transmit power: {st.p}")
    bits = st.beta if isinstance(st, PassiveState) else st.alpha
    if np.any(np.minimum(np.abs(bits), np.abs(1.0 - bits)) > atol):
        raise ModelError(f"on-off factors must be binary, got {bits}")
    return st


def cascaded_channels(scn: Scenario, g):
    """Per-user cascaded channels H^H diag(g) h_r[k], stacked (K, M)."""
    # (H^H)(g * h_r[k]) for each user; h_r is (K, N).
    return (scn.h_r * g) @ scn.H.conj()


def bs_side_gains(scn: Scenario, w):
    """|(H w_k)_n|^2 per user and element, stacked (K, N).

    These weight the amplified thermal noise reaching combiner w_k, since
    the n-th entry of w_k^H H^H is conj((H w_k)_n).
    """
    return np.abs(scn.H @ w.T).T ** 2


def _link_powers(scn, st, g):
    """Received-power matrix S[k, i] = p_i |w_k^H H^H diag(g) h_r[i]|^2."""
    x = cascaded_channels(scn, g)          # (K, M), row i is user i
    cross = st.w.conj() @ x.T              # cross[k, i] = w_k^H x_i
    return st.p[np.newaxis, :] * np.abs(cross) ** 2


def sinr_passive(scn: Scenario, st: PassiveState, k=None):
    """SINR of user k (or all users when k is None) under passive reflection:

        p_k |w_k^H H^H B Theta h_r,k|^2
        over sum_{i != k} p_i |w_k^H H^H B Theta h_r,i|^2 + delta^2
    """
    S = _link_powers(scn, st, st.reflection())
    signal = np.diag(S)
    interference = S.sum(axis=1) - signal
    out = signal / (interference + scn.delta2_w)
    return out if k is None else float(out[k])


def sinr_active(scn: Scenario, st: ActiveState, k=None):
    """Active-RIS SINR; the denominator gains the amplified-noise term
    sigma^2 ||w_k^H H^H A Lam Theta||^2."""
    g = st.reflection()
    S = _link_powers(scn, st, g)
    signal = np.diag(S)
    interference = S.sum(axis=1) - signal
    amp_noise = scn.sigma2_w * (bs_side_gains(scn, st.w) * np.abs(g) ** 2).sum(axis=1)
    out = signal / (interference + amp_noise + scn.delta2_w)
    return out if k is None else float(out[k])


def rate(sinr):
    """Spectral efficiency log2(1 + sinr), bits/s/Hz."""
    return np.log2(1.0 + np.asarray(sinr, dtype=float))


def user_rates(scn, st):
    sinrs = sinr_passive(scn, st) if isinstance(st, PassiveState) else sinr_active(scn, st)
    return rate(sinrs)


def amp_power(scn: Scenario, st: ActiveState):
    """Power emitted by the active elements:

        sum_k p_k ||A Lam Theta h_r,k||^2 + sigma^2 ||A Lam Theta||_F^2
    """
    g2 = np.abs(st.reflection()) ** 2
    signal_part = float(st.p @ ((np.abs(scn.h_r) ** 2) @ g2))
    return signal_part + scn.sigma2_w * float(g2.sum())


def power_total_passive(scn: Scenario, st: PassiveState):
    """sum_k (p_k + P_k) + P_BS + sum_n beta_n P_C."""
    return (float(st.p.sum()) + scn.K * scn.puser_circ_w + scn.pbs_w
            + scn.pc_w * float(st.beta.sum()))


def power_total_active(scn: Scenario, st: ActiveState):
    """Adds per-element circuit plus DC power and the amplification power."""
    circuits = (scn.pc_w + scn.pdc_w) * float(st.alpha.sum())
    return (float(st.p.sum()) + scn.K * scn.puser_circ_w + scn.pbs_w
            + circuits + amp_power(scn, st))


def energy_efficiency(sum_rate, total_power):
    """bits/Hz/Joule."""
    if total_power <= 0:
        raise ModelError(f"total power must be positive, got {total_power}")
    return float(sum_rate) / float(total_power)


def evaluate(scn, st):
    """(sum_rate, total_power, ee) for either state type."""
    rates = user_rates(scn, st)
    total = (power_total_passive(scn, st) if isinstance(st, PassiveState)
             else power_total_active(scn, st))
    sum_rate = float(rates.sum())
    return sum_rate, total, energy_efficiency(sum_rate, total)


@dataclass
class ConstraintReport:
    """Signed residuals, >= 0 means satisfied.

    power:  P_max - p_k per user
    rate:   R_k - R_min per user
    binary: -(distance of each on-off factor to the nearest of {0, 1})
    amp:    P_RIS_max - amplification power (active only, else None)
    rho_warnings: on-elements with rho <= 1, reported but not a violation
    """

    power: np.ndarray
    rate: np.ndarray
    binary: np.ndarray
    amp: float | None = None
    rho_warnings: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def min_residual(self):
        worst = min(self.power.min(), self.rate.min(), self.binary.min())
        if self.amp is not None:
            worst = min(worst, self.amp)
        return float(worst)

    def ok(self, tol=1e-9):
        return self.min_residual >= -tol


def check_constraints(scn, st) -> ConstraintReport:
    """Residuals of the feasibility system for either RIS type."""
    rates = user_rates(scn, st)
    power_res = scn.pmax_user_w - st.p
    rate_res = rates - scn.rmin_bps
    bits = st.beta if isinstance(st, PassiveState) else st.alpha
    binary_res = -np.minimum(np.abs(bits), np.abs(1.0 - bits))
    if isinstance(st, ActiveState):
        amp_res = scn.pmax_ris_w - amp_power(scn, st)
        warn = (st.alpha > 0.5) & (st.rho <= 1.0)
        return ConstraintReport(power_res, rate_res, binary_res, amp_res, warn)
    return ConstraintReport(power_res, rate_res, binary_res)
