"""Alternating-optimization drivers for both RIS types plus baselines.

Outer layer: Dinkelbach updates of eta (bits/Hz/Joule) until the residual
sum_rate - eta * total_power falls below tol_outer.  Inner layer: one
block-coordinate sweep per iteration in the order receive beamformer,
quadratic-transform auxiliaries (t, r), transmit powers with subgradient
duals, reflecting surface (SCA + rounding + polish).

Every block update is gated: a candidate is accepted only if it keeps the
constraint residuals above -1e-6 and does not decrease the acceptance
metric (energy efficiency, or sum rate for the rate_max baselines) by
more than 1e-9.  Rounding and finite dual steps can transiently hurt, so
the gate is what makes the reported trace monotone.

Unit note: the KKT power formulas and the surface surrogate price power
through the multiplier of a natural-log rate surrogate, so the drivers
hand them eta * ln(2); eta itself, the traces, and all reports stay in
bits.  Surface candidates are evaluated with a refreshed MMSE beamformer
(the next sweep's w block applied early) so a good surface move is not
rejected for being paired with a stale combiner.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import fp_core, mmse, models, power_alloc, reflect
from .fp_core import LN2, FpState
from .models import ActiveState, PassiveState
from .scenario import Scenario

BASELINE_VARIANTS = (
    "rate_max_passive", "rate_max_active",
    "random_phase_passive", "random_phase_active",
    "fully_passive", "fully_active",
)

_RANDOM_PHASE_STREAM = 0x5A17C0DE  # mixed with the scenario seed


class SolverError(RuntimeError):
    pass


@dataclass
class SolveOptions:
    outer_max: int = 30        # Dinkelbach iterations
    inner_max: int = 50        # AO sweeps per Dinkelbach iteration
    tol_outer: float = 1e-6    # |sum_rate - eta * power| stop
    tol_inner: float = 1e-4    # relative EE change stop
    seed: int = 0              # echo; randomness only in random_phase inits
    sca_rounds: int = 4        # SCA rounds per AO sweep
    sca_penalty: float = 10.0  # hinge weight for the anchored cuts
    dual_steps: int = 200      # subgradient steps per power update
    eps_abs: float = 1e-6      # subproblem solver tolerances
    eps_rel: float = 1e-6
    admm_max_iter: int = 2000

    def validate(self):
        if min(self.outer_max, self.inner_max, self.dual_steps, self.sca_rounds) < 1:
            raise SolverError("iteration limits must be positive")
        if min(self.tol_outer, self.tol_inner, self.eps_abs, self.eps_rel) <= 0:
            raise SolverError("tolerances must be positive")
        return self


@dataclass
class TraceRow:
    outer: int
    inner: int
    ee: float
    sum_rate: float
    total_power_w: float
    n_on: int


@dataclass
class PassiveSolution:
    theta: np.ndarray
    beta: np.ndarray
    w: np.ndarray
    p: np.ndarray
    rates: np.ndarray
    sum_rate: float
    total_power_w: float
    ee: float


@dataclass
class ActiveSolution:
    theta: np.ndarray
    alpha: np.ndarray
    rho: np.ndarray
    w: np.ndarray
    p: np.ndarray
    rates: np.ndarray
    sum_rate: float
    total_power_w: float
    amp_power_w: float
    ee: float
    rho_warning: bool = False


@dataclass
class SolveReport:
    solution: object
    ee_trace: list
    status: str                       # converged | max_iter | infeasible
    sca_gap: float = 0.0              # lifted gap of the last accepted SCA
    bigm_max_off_u: float = 0.0       # max |u_n| over relaxed alpha_n ~ 0
    relaxed_alpha: np.ndarray | None = None

    @property
    def ee(self):
        return self.solution.ee


def aligned_init_phases(scn: Scenario):
    """Deterministic starting phases: align user 1's cascade as seen by
    the first BS antenna, theta_n = arg(H[n, 0]) - arg(h_r[0, n])."""
    return np.angle(scn.H[:, 0]) - np.angle(scn.h_r[0])


def budget_rho(scn: Scenario, p=None):
    """Uniform amplification saturating the budget at transmit powers p
    (defaults to every user at the cap): the largest all-on uniform rho with
    sum_k p_k rho^2 ||h_r,k||^2 + sigma^2 rho^2 N <= P_RIS."""
    if p is None:
        p = np.full(scn.K, scn.pmax_user_w)
    load = float(p @ (np.abs(scn.h_r) ** 2).sum(axis=1)) + scn.sigma2_w * scn.N
    return math.sqrt(scn.pmax_ris_w / load)


def _evaluate(scn, st):
    sum_rate, total, ee = models.evaluate(scn, st)
    return sum_rate, total, ee


def _metric(sum_rate, ee, variant):
    return sum_rate if variant.startswith("rate_max") else ee


def _init_state(scn, mode, variant, seed):
    if variant.startswith("random_phase"):
        rng = np.random.default_rng([int(seed), _RANDOM_PHASE_STREAM])
        theta = rng.uniform(0.0, 2.0 * np.pi, scn.N)
    else:
        theta = aligned_init_phases(scn)
    p = np.full(scn.K, scn.pmax_user_w)
    if mode == "passive":
        beta = np.ones(scn.N)
        w = mmse.mmse_passive(scn, p, beta, theta)
        return PassiveState(theta=theta, beta=beta, w=w, p=p)
    rho = np.full(scn.N, 0.999 * budget_rho(scn))
    alpha = np.ones(scn.N)
    w = mmse.mmse_active(scn, p, alpha, rho, theta)
    return ActiveState(theta=theta, alpha=alpha, rho=rho, w=w, p=p)


def _feasibility_precheck(scn, mode):
    """All elements on, p at the cap, aligned phases (budget rho when
    active): if the minimum rate misses the floor here, give up early."""
    st = _init_state(scn, mode, "proposed", seed=0)
    rates = models.user_rates(scn, st)
    return float(rates.min()) >= scn.rmin_bps - 1e-9, st


def _refresh_w(scn, st, mode):
    if mode == "passive":
        return mmse.mmse_passive(scn, st.p, st.beta, st.theta)
    return mmse.mmse_active(scn, st.p, st.alpha, st.rho, st.theta)


def _solve(scn: Scenario, opts: SolveOptions, mode, variant) -> SolveReport:
    opts.validate()
    feasible, state = _feasibility_precheck(scn, mode)
    if variant.startswith("random_phase") or variant.startswith("fully"):
        state = _init_state(scn, mode, variant, opts.seed)
        state.w = _refresh_w(scn, state, mode)
    if not feasible:
        sum_rate, total, ee = _evaluate(scn, state)
        return SolveReport(solution=_pack_solution(scn, state, mode),
                           ee_trace=[TraceRow(0, 0, ee, sum_rate, total,
                                              _n_on(state, mode))],
                           status="infeasible")

    fp = FpState.zeros(scn.K)
    fp.t = fp_core.update_t(scn, state, mode)
    fp.r = fp_core.update_r(scn, state, fp.t, mode)
    rate_max = variant.startswith("rate_max")
    skip_reflect = variant.startswith("random_phase")
    pin_on = variant.startswith("fully")

    sum_rate, total, ee = _evaluate(scn, state)
    metric = _metric(sum_rate, ee, variant)
    trace = [TraceRow(0, 0, ee, sum_rate, total, _n_on(state, mode))]
    status = "max_iter"
    warm_cache = {}
    last_gap = 0.0
    bigm_max = 0.0
    relaxed_alpha = None

    def try_accept(candidate):
        nonlocal state, sum_rate, total, ee, metric
        report = models.check_constraints(scn, candidate)
        if report.min_residual < -1e-6:
            return False
        c_sum, c_total, c_ee = _evaluate(scn, candidate)
        c_metric = _metric(c_sum, c_ee, variant)
        if c_metric < metric - 1e-9:
            return False
        state, sum_rate, total, ee, metric = candidate, c_sum, c_total, c_ee, c_metric
        return True

    outer_budget = 1 if rate_max else opts.outer_max
    rel_gap = 1.0
    for outer in range(1, outer_budget + 1):
        eta_round = fp.eta
        surface_stalls = 0
        # inexact Dinkelbach: while eta is far from the fixed point the
        # inner problem only needs a coarse solve
        tol_eff = max(opts.tol_inner, min(3e-3, 0.05 * rel_gap))
        for inner in range(1, opts.inner_max + 1):
            metric_prev = metric

            cand = state.copy()
            cand.w = _refresh_w(scn, cand, mode)
            try_accept(cand)

            # powers: the dual machinery prices rates in nats and refreshes
            # (t, r) internally while iterating
            fp_nats = replace(fp, eta=fp.eta * LN2)
            p_new, fp_nats = power_alloc.dual_power_update(
                scn, state, fp_nats, mode, steps=opts.dual_steps)
            fp.lam, fp.phi, fp.kappa = fp_nats.lam, fp_nats.phi, fp_nats.kappa
            cand = state.copy()
            cand.p = p_new
            cand.w = _refresh_w(scn, cand, mode)
            try_accept(cand)

            # auxiliaries consistent with whatever was accepted
            fp.t = fp_core.update_t(scn, state, mode)
            fp.r = fp_core.update_r(scn, state, fp.t, mode)

            # skip the surface solver once its gains within this outer
            # round have stalled; the next eta reweights the tradeoff
            if not skip_reflect and surface_stalls < 2:
                metric_pre = metric
                accepted, gap, bigm, rel_a = _surface_block(
                    scn, state, fp, mode, opts, pin_on, try_accept,
                    warm_cache)
                if accepted:
                    last_gap = gap
                    if mode == "active":
                        bigm_max = bigm
                        relaxed_alpha = rel_a
                moved = metric - metric_pre
                if moved <= 0.25 * opts.tol_inner * max(1.0, abs(metric_pre)):
                    surface_stalls += 1
                else:
                    surface_stalls = 0

            trace.append(TraceRow(outer, inner, ee, sum_rate, total,
                                  _n_on(state, mode)))
            if abs(metric - metric_prev) <= tol_eff * max(1.0, abs(metric_prev)):
                break

        if rate_max:
            status = "converged"
            break
        dinkelbach_gap = sum_rate - eta_round * total
        rel_gap = abs(dinkelbach_gap) / max(sum_rate, 1e-12)
        fp.eta = fp_core.update_eta(sum_rate, total)
        if abs(dinkelbach_gap) < opts.tol_outer:
            status = "converged"
            break

    return SolveReport(solution=_pack_solution(scn, state, mode),
                       ee_trace=trace, status=status, sca_gap=last_gap,
                       bigm_max_off_u=bigm_max, relaxed_alpha=relaxed_alpha)


def _surface_block(scn, state, fp, mode, opts, pin_on, try_accept,
                   warm_cache):
    """Run the SCA + recovery for one sweep; returns (accepted, gap,
    bigm_off_max, relaxed_alpha)."""
    kwargs = dict(rounds=opts.sca_rounds, penalty=opts.sca_penalty,
                  eps_abs=opts.eps_abs, eps_rel=opts.eps_rel,
                  max_iter=opts.admm_max_iter, warm_cache=warm_cache)
    if mode == "passive":
        sca = reflect.sca_passive(scn, state, fp, **kwargs)
        if sca.status == "infeasible":
            return False, 0.0, 0.0, None
        if pin_on:
            beta = np.ones(scn.N)
            theta = np.angle(sca.v)
            rec_status = "ok"
        else:
            beta, theta, rec_status = reflect.recover_passive(
                scn, state, fp, sca, warm_cache=warm_cache)
        if rec_status != "ok":
            return False, 0.0, 0.0, None
        cand = state.copy()
        cand.beta, cand.theta = beta, theta
        cand.w = mmse.mmse_passive(scn, cand.p, beta, theta)
        return try_accept(cand), sca.lifted_gap, 0.0, None

    fixed = np.ones(scn.N) if pin_on else None
    sca = reflect.sca_active(scn, state, fp, fixed_alpha=fixed, **kwargs)
    if sca.status == "infeasible":
        return False, 0.0, 0.0, None
    off = np.asarray(sca.alpha) <= 1e-6
    bigm_off = float(np.abs(sca.v[off]).max()) if off.any() else 0.0
    alpha, rho, theta, rec_status = reflect.recover_active(
        scn, state, fp, sca, warm_cache=warm_cache,
        polish_kwargs=dict(penalty=opts.sca_penalty, eps_abs=opts.eps_abs,
                           eps_rel=opts.eps_rel, max_iter=opts.admm_max_iter))
    if rec_status != "ok":
        return False, 0.0, 0.0, None
    if pin_on:
        alpha = np.ones(scn.N)
    cand = state.copy()
    cand.alpha, cand.rho, cand.theta = alpha, rho, theta
    cand = _amplitude_line_search(scn, cand, fp.eta)
    cand.w = mmse.mmse_active(scn, cand.p, cand.alpha, cand.rho, cand.theta)
    return try_accept(cand), sca.lifted_gap, bigm_off, np.asarray(sca.alpha)


def _amplitude_line_search(scn, state, eta_bits, grid=24, refine=40):
    """Best uniform scaling of rho for the true Dinkelbach objective
    sum_rate - eta * total_power, within the amplification budget and the
    rate floor.  The surface surrogate is tight at the current point, so
    its own radial optimum is never far; searching the true objective
    jumps straight to the conditional optimum."""
    amp_now = models.amp_power(scn, state)
    if amp_now <= 0:
        return state
    z_hi = math.sqrt(scn.pmax_ris_w / amp_now) * (1.0 - 1e-9)
    z_lo = min(1e-3, z_hi)

    def value(z):
        cand = state.copy()
        cand.rho = state.rho * z
        rates = models.user_rates(scn, cand)
        if rates.min() < scn.rmin_bps - 1e-12:
            return -np.inf, None
        total = models.power_total_active(scn, cand)
        return float(rates.sum()) - eta_bits * total, cand

    zs = np.geomspace(max(z_lo, 1e-6), z_hi, grid)
    zs = np.append(zs, 1.0)
    vals = [value(z)[0] for z in zs]
    best = int(np.argmax(vals))
    if not np.isfinite(vals[best]):
        return state
    lo = zs[max(best - 1, 0)]
    hi = zs[min(best + 1, len(zs) - 1)]
    gold = 0.5 * (math.sqrt(5.0) - 1.0)
    a, b = lo, hi
    c = b - gold * (b - a)
    d = a + gold * (b - a)
    fc, fd = value(c)[0], value(d)[0]
    for _ in range(refine):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - gold * (b - a)
            fc = value(c)[0]
        else:
            a, c, fc = c, d, fd
            d = a + gold * (b - a)
            fd = value(d)[0]
    candidates = [(vals[best], zs[best]), (fc, c), (fd, d)]
    z_star = max(candidates)[1]
    out = value(z_star)[1]
    return out if out is not None else state


def _n_on(state, mode):
    bits = state.beta if mode == "passive" else state.alpha
    return int(round(float(bits.sum())))


def _pack_solution(scn, state, mode):
    rates = models.user_rates(scn, state)
    sum_rate = float(rates.sum())
    if mode == "passive":
        total = models.power_total_passive(scn, state)
        return PassiveSolution(theta=state.theta, beta=state.beta, w=state.w,
                               p=state.p, rates=rates, sum_rate=sum_rate,
                               total_power_w=total,
                               ee=models.energy_efficiency(sum_rate, total))
    total = models.power_total_active(scn, state)
    on = state.alpha > 0.5
    return ActiveSolution(theta=state.theta, alpha=state.alpha, rho=state.rho,
                          w=state.w, p=state.p, rates=rates,
                          sum_rate=sum_rate, total_power_w=total,
                          amp_power_w=models.amp_power(scn, state),
                          ee=models.energy_efficiency(sum_rate, total),
                          rho_warning=bool(np.any(on & (state.rho <= 1.0))))


def solve_passive(scn: Scenario, opts: SolveOptions = None) -> SolveReport:
    """Element on-off energy-efficiency maximization, passive surface."""
    return _solve(scn, opts or SolveOptions(), "passive", "proposed")


def solve_active(scn: Scenario, opts: SolveOptions = None) -> SolveReport:
    """Element on-off energy-efficiency maximization, active surface."""
    return _solve(scn, opts or SolveOptions(), "active", "proposed")


def solve_baseline(scn: Scenario, opts: SolveOptions, variant) -> SolveReport:
    """Comparison modes: rate_max_* pins eta at zero and accepts on sum
    rate; random_phase_* draws the phases once (seeded) and skips the
    surface solver; fully_* pins every element on."""
    if variant not in BASELINE_VARIANTS:
        raise SolverError(f"unknown baseline variant {variant!r}; "
                          f"expected one of {BASELINE_VARIANTS}")
    mode = "passive" if variant.endswith("passive") else "active"
    return _solve(scn, opts or SolveOptions(), mode, variant)
