"""Lifted SCA solver for the reflecting-surface block.

The surface variables are lifted: the passive reflection vector v
(v_n = beta_n e^{j theta_n}) is paired with V via the Schur block
[[V, v], [v^H, 1]] >= 0.  The active surface uses u with diag(u^H) =
A Lam Theta (so u_n = alpha_n rho_n e^{-j theta_n}), the same lift on
(U, u), a box-relaxed on-off vector alpha, and component-wise Big-M rows
|Re u_n| <= M alpha_n, |Im u_n| <= M alpha_n with M = 2 sqrt(P_RIS / sigma^2).

The anchored first-order cuts (trace cut Tr(V) <= 2 Re(vbar^H v) -
||vbar||^2, binary-modulus cut |v_n| + |vbar_n|^2 - 2 Re(vbar_n^* v_n)
<= 0, and the on-off cut alpha_n(1 - 2 abar_n) + abar_n^2 <= 0) are
enforced as exact hinge penalties rather than hard rows.  As hard rows
they pin each subproblem to its anchor: the Schur block gives
Tr(U) >= ||u||^2, so the trace cut implies ||u - ubar||^2 <= 0, and the
binary cut at an on-anchor admits only v = vbar.  The penalty form is
tight at the anchor (zero hinge when the anchor satisfies the original
nonconvex constraint), keeps every round's surrogate monotone, and still
squeezes the lifted gap Tr(V - v v^H) to zero as the anchors converge,
while letting the iteration actually move.  Hinge weights ramp up across
SCA rounds so early rounds take large steps and late rounds pin the
relaxation down.

Every subproblem is a concave maximization whose only non-linearities are
sqrt terms of linear functionals (kept exact through epigraph second-order
cones), modulus bounds, and the hinges; it is lowered to the canonical
conic form of conic.solve_conic.  Channel quadratics are pre-normalized by
an anchor scale so the cone geometry is O(1); the normalization is
recorded on the subproblem and undone when unpacking.

Internally the surrogate objective is kept in nats (the multiplier of the
total power is eta * ln 2) so that the same stationarity conventions hold
as in fp_core; values returned to callers are plain surrogate values used
only for monotonicity decisions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import models
from .conic import ConeSpec, ConicSolution, solve_conic, svec, unsvec
from .fp_core import LN2, FpState
from .scenario import Scenario


class ReflectError(RuntimeError):
    pass


def bigm_constant(scn: Scenario):
    """2 sqrt(P_RIS / sigma^2): any feasible amplification stays below half."""
    return 2.0 * math.sqrt(scn.pmax_ris_w / scn.sigma2_w)


def _pair_index(h):
    iu = np.triu_indices(h, 1)
    return iu, {(int(i), int(j)): idx for idx, (i, j) in enumerate(zip(*iu))}


@dataclass
class ConvexSubproblem:
    """Canonical-form conic encoding of one SCA subproblem.

    c, A, b, cones define min c'x s.t. Ax + s = b, s in K.  layout maps
    variable-group names to index slices of x, tags names each cone
    row/block, and meta keeps the physical data needed to evaluate the
    surrogate and constraints exactly.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cones: ConeSpec
    layout: dict
    tags: list
    offset: float          # constant part of the surrogate (nats)
    meta: dict
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 5000

    @property
    def n(self):
        return self.c.size


class _Builder:
    """Row/block accumulator for the canonical form."""

    def __init__(self, n):
        self.n = n
        self.nonneg_rows = []
        self.nonneg_b = []
        self.zero_rows = []
        self.zero_b = []
        self.soc_blocks = []
        self.psd_blocks = []
        self.tags = {"zero": [], "nonneg": [], "soc": [], "psd": []}

    def row(self):
        return np.zeros(self.n)

    def add_nonneg(self, a, rhs, tag):
        """a . x <= rhs"""
        self.nonneg_rows.append(a)
        self.nonneg_b.append(rhs)
        self.tags["nonneg"].append(tag)

    def add_zero(self, a, rhs, tag):
        """a . x = rhs"""
        self.zero_rows.append(a)
        self.zero_b.append(rhs)
        self.tags["zero"].append(tag)

    def add_soc(self, A_blk, b_blk, tag):
        """b_blk - A_blk x in SOC (first coordinate is the cone's t)."""
        self.soc_blocks.append((np.asarray(A_blk), np.asarray(b_blk)))
        self.tags["soc"].append(tag)

    def add_psd(self, A_blk, b_blk, order, tag):
        self.psd_blocks.append((A_blk, b_blk, order))
        self.tags["psd"].append(tag)

    def finish(self, c, layout, offset, meta, **solver_opts):
        parts_A, parts_b = [], []
        if self.zero_rows:
            parts_A.append(np.vstack(self.zero_rows))
            parts_b.append(np.asarray(self.zero_b, dtype=float))
        if self.nonneg_rows:
            parts_A.append(np.vstack(self.nonneg_rows))
            parts_b.append(np.asarray(self.nonneg_b, dtype=float))
        soc_dims = []
        for A_blk, b_blk in self.soc_blocks:
            parts_A.append(A_blk)
            parts_b.append(b_blk)
            soc_dims.append(A_blk.shape[0])
        psd_orders = []
        for A_blk, b_blk, order in self.psd_blocks:
            parts_A.append(A_blk)
            parts_b.append(b_blk)
            psd_orders.append(order)
        cones = ConeSpec(zero=len(self.zero_rows), nonneg=len(self.nonneg_rows),
                         soc=tuple(soc_dims), psd=tuple(psd_orders))
        tags = (self.tags["zero"] + self.tags["nonneg"]
                + self.tags["soc"] + self.tags["psd"])
        return ConvexSubproblem(
            c=c, A=np.vstack(parts_A), b=np.concatenate(parts_b),
            cones=cones, layout=layout, tags=tags, offset=offset, meta=meta,
            **solver_opts)


def _schur_psd_block(n_total, h, lift_slice, re_slice, im_slice):
    """PSD rows for [[X, x], [x^H, 1]] >= 0 over svec(X) and Re/Im x.

    X has order h-1 and occupies lift_slice as svec; x occupies the
    re/im slices.  Returns (A_blk, b_blk)."""
    nsmall = h - 1
    iu, _ = _pair_index(h)
    iuN, pair_small = _pair_index(nsmall)
    npairs_big = iu[0].size
    npairs_small = iuN[0].size
    A_blk = np.zeros((h * h, n_total))
    b_blk = np.zeros(h * h)
    lift0 = lift_slice.start
    for i in range(nsmall):
        A_blk[i, lift0 + i] = -1.0
    b_blk[nsmall] = 1.0
    for idx, (i, j) in enumerate(zip(*iu)):
        if j < nsmall:
            pid = pair_small[(int(i), int(j))]
            A_blk[h + idx, lift0 + nsmall + pid] = -1.0
            A_blk[h + npairs_big + idx, lift0 + nsmall + npairs_small + pid] = -1.0
        else:
            A_blk[h + idx, re_slice.start + i] = -math.sqrt(2.0)
            A_blk[h + npairs_big + idx, im_slice.start + i] = -math.sqrt(2.0)
    return A_blk, b_blk


def _cascade_outer_products(scn, w):
    """q[k, i] with q[k, i, n] = (H w_k)_n * conj(h_r[i, n]): the rank-one
    factors satisfying |q[k,i]^H v|^2 = |w_k^H H^H diag(v) h_r[i]|^2."""
    Hw = (scn.H @ w.T).T                       # (K, N), row k = H w_k
    return Hw[:, None, :] * scn.h_r.conj()[None, :, :]


def _conj_cascade_factors(scn, w):
    """x[k, i] = conj(H w_k) * h_r[i]: |x[k,i]^H u|^2 = |w_k^H H^H diag(conj(u)) h_r[i]|^2."""
    Hw = (scn.H @ w.T).T
    return Hw.conj()[:, None, :] * scn.h_r[None, :, :]


DEFAULT_PENALTY = 30.0


def build_passive_subproblem(scn: Scenario, state, fp: FpState, anchor,
                             *, kappa=None, penalty=DEFAULT_PENALTY,
                             eps_abs=1e-6, eps_rel=1e-6,
                             max_iter=5000) -> ConvexSubproblem:
    """Lifted surface subproblem for the passive RIS, anchored at anchor
    (the previous v iterate)."""
    N, K = scn.N, scn.K
    anchor = np.asarray(anchor, dtype=np.complex128)
    q = _cascade_outer_products(scn, state.w)      # (K, K, N)
    if kappa is None:
        kappa = max(float(np.linalg.norm(q[k, k])) for k in range(K))
        kappa = max(kappa * math.sqrt(N), 1e-300)
    qs = q / kappa
    delta2s = scn.delta2_w / kappa ** 2
    eta_nats = fp.eta * LN2
    rbar = scn.rmin_bar
    p, r, t = state.p, fp.r, fp.t

    nV = N * N
    sV = slice(0, nV)
    sRe = slice(nV, nV + N)
    sIm = slice(nV + N, nV + 2 * N)
    sS = slice(nV + 2 * N, nV + 2 * N + K)
    sW = slice(nV + 2 * N + K, nV + 3 * N + K)
    sXl = slice(nV + 3 * N + K, nV + 3 * N + K + 1)   # lift hinge
    sXb = slice(nV + 3 * N + K + 1, nV + 4 * N + K + 1)  # binary hinges
    n = nV + 4 * N + K + 1
    bld = _Builder(n)

    G = np.einsum("kin,kim->kinm", qs, qs.conj())  # (K, K, N, N), G[k,i] PSD
    G_svec = np.empty((K, K, nV))
    for k in range(K):
        for i in range(K):
            G_svec[k, i] = svec(G[k, i])

    # minimum-SINR rows: p_k <Gkk,V> - Rbar (sum_{i!=k} p_i <Gki,V> + delta2) >= 0
    for k in range(K):
        m_k = p[k] * G_svec[k, k] - rbar * sum(
            p[i] * G_svec[k, i] for i in range(K) if i != k)
        a = bld.row()
        a[sV] = -m_k
        bld.add_nonneg(a, -rbar * delta2s, f"rate_min[{k}]")

    # anchored trace-cut hinge: xi_l >= Tr(V) - 2 Re(anchor^H v) + ||anchor||^2
    a = bld.row()
    a[sV] = svec(np.eye(N, dtype=np.complex128))
    a[sRe] = -2.0 * anchor.real
    a[sIm] = -2.0 * anchor.imag
    a[sXl] = -1.0
    bld.add_nonneg(a, -float(np.vdot(anchor, anchor).real), "trace_cut_hinge")
    a = bld.row()
    a[sXl] = -1.0
    bld.add_nonneg(a, 0.0, "trace_cut_hinge_floor")

    # anchored binary-modulus hinges:
    # xi_b,n >= w_n + |anchor_n|^2 - 2 Re(anchor_n^* v_n), with w_n >= |v_n|
    for nn in range(N):
        a = bld.row()
        a[sW.start + nn] = 1.0
        a[sRe.start + nn] = -2.0 * anchor[nn].real
        a[sIm.start + nn] = -2.0 * anchor[nn].imag
        a[sXb.start + nn] = -1.0
        bld.add_nonneg(a, -abs(anchor[nn]) ** 2, f"binary_cut_hinge[{nn}]")
        a = bld.row()
        a[sXb.start + nn] = -1.0
        bld.add_nonneg(a, 0.0, f"binary_cut_hinge_floor[{nn}]")

    # |v_n| <= 1 and |v_n| <= w_n
    for nn in range(N):
        blk = np.zeros((3, n))
        blk[1, sRe.start + nn] = -1.0
        blk[2, sIm.start + nn] = -1.0
        bld.add_soc(blk, np.array([1.0, 0.0, 0.0]), f"modulus_le_1[{nn}]")
    for nn in range(N):
        blk = np.zeros((3, n))
        blk[0, sW.start + nn] = -1.0
        blk[1, sRe.start + nn] = -1.0
        blk[2, sIm.start + nn] = -1.0
        bld.add_soc(blk, np.zeros(3), f"modulus_hypograph[{nn}]")

    # sqrt epigraphs: s_k^2 <= <Gkk, V>  via (y+1, 2s, y-1) in SOC
    for k in range(K):
        gv = G_svec[k, k]
        blk = np.zeros((3, n))
        blk[0, sV] = -gv
        blk[1, sS.start + k] = -2.0
        blk[2, sV] = -gv
        bld.add_soc(blk, np.array([1.0, 0.0, -1.0]), f"sqrt_epigraph[{k}]")

    A_psd, b_psd = _schur_psd_block(n, N + 1, sV, sRe, sIm)
    bld.add_psd(A_psd, b_psd, N + 1, "schur_lift")

    # objective: minimize <Q,V> + eta_nats P_C sum w_n + penalty hinges
    #            - sum_k 2 r_k sqrt((1+t_k) p_k) kappa s_k
    Q = np.zeros((N, N), dtype=np.complex128)
    for k in range(K):
        Q += r[k] ** 2 * sum(p[i] * G[k, i] for i in range(K)) * kappa ** 2
    c = np.zeros(n)
    c[sV] = svec(Q)
    c[sS] = -2.0 * r * np.sqrt((1.0 + t) * p) * kappa
    c[sW] = eta_nats * scn.pc_w
    c[sXl] = penalty
    c[sXb] = penalty
    offset = float(np.log1p(t).sum() - t.sum() - (r ** 2).sum() * scn.delta2_w
                   - eta_nats * (p.sum() + K * scn.puser_circ_w + scn.pbs_w))
    layout = {"V": sV, "v_re": sRe, "v_im": sIm, "s": sS, "w": sW,
              "hinge_lift": sXl, "hinge_binary": sXb}
    meta = {"mode": "passive", "q": q, "kappa": kappa, "p": p.copy(),
            "r": r.copy(), "t": t.copy(), "eta_nats": eta_nats,
            "anchor": anchor.copy(), "rbar": rbar, "N": N, "K": K,
            "pc_w": scn.pc_w, "delta2": scn.delta2_w, "penalty": penalty}
    return bld.finish(c, layout, offset, meta,
                      eps_abs=eps_abs, eps_rel=eps_rel, max_iter=max_iter)


def build_active_subproblem(scn: Scenario, state, fp: FpState, anchor_u,
                            anchor_alpha=None, *, fixed_alpha=None,
                            kappa_u=None, kappa_x=None, penalty=DEFAULT_PENALTY,
                            eps_abs=1e-6, eps_rel=1e-6,
                            max_iter=5000) -> ConvexSubproblem:
    """Lifted surface subproblem for the active RIS.

    anchor_u is the previous u iterate (u_n = alpha_n rho_n e^{-j theta_n});
    anchor_alpha the previous relaxed on-off vector.  With fixed_alpha the
    on-off pattern becomes a constant (polish mode): off elements are
    pinned to zero, the Big-M and on-off rows disappear.
    """
    N, K = scn.N, scn.K
    anchor_u = np.asarray(anchor_u, dtype=np.complex128)
    if anchor_alpha is None:
        anchor_alpha = np.ones(N)
    x = _conj_cascade_factors(scn, state.w)        # (K, K, N)
    hw2 = np.abs((scn.H @ state.w.T).T) ** 2       # (K, N): |（H w_k)_n|^2
    hr2 = np.abs(scn.h_r) ** 2                     # (K, N)
    if kappa_u is None:
        kappa_u = max(1.0, float(np.abs(anchor_u).max(initial=0.0)))
    anchor_us = anchor_u / kappa_u
    if kappa_x is None:
        kappa_x = max(float(abs(np.vdot(x[k, k], anchor_u))) for k in range(K))
        kappa_x = max(kappa_x, 1e-300)
    # scaled factors: <Fs[k,i], Us> = |x[k,i]^H u|^2 / kappa_x^2 with Us = U/kappa_u^2
    xs = x * (kappa_u / kappa_x)
    delta2s = scn.delta2_w / kappa_x ** 2
    sig2_d = scn.sigma2_w * hw2 * (kappa_u / kappa_x) ** 2   # scaled noise diagonals
    eta_nats = fp.eta * LN2
    rbar = scn.rmin_bar
    p, r, t = state.p, fp.r, fp.t
    with_alpha = fixed_alpha is None
    bigm = bigm_constant(scn) / kappa_u

    nU = N * N
    sU = slice(0, nU)
    sRe = slice(nU, nU + N)
    sIm = slice(nU + N, nU + 2 * N)
    if with_alpha:
        sA = slice(nU + 2 * N, nU + 3 * N)
        sS = slice(nU + 3 * N, nU + 3 * N + K)
        sXl = slice(nU + 3 * N + K, nU + 3 * N + K + 1)
        sXa = slice(nU + 3 * N + K + 1, nU + 4 * N + K + 1)
        n = nU + 4 * N + K + 1
    else:
        sA = None
        sXa = None
        sS = slice(nU + 2 * N, nU + 2 * N + K)
        sXl = slice(nU + 2 * N + K, nU + 2 * N + K + 1)
        n = nU + 2 * N + K + 1
    bld = _Builder(n)

    F = np.einsum("kin,kim->kinm", xs, xs.conj())
    F_svec = np.empty((K, K, nU))
    for k in range(K):
        for i in range(K):
            F_svec[k, i] = svec(F[k, i])
    eye_svec = svec(np.eye(N, dtype=np.complex128))

    def diag_svec(d):
        out = np.zeros(nU)
        out[:N] = d
        return out

    # amplification budget: sum_k p_k <Ek,U> + sigma^2 Tr(U) <= P_RIS
    # (scaled U carries kappa_u^2)
    a = bld.row()
    a[sU] = diag_svec(p @ hr2 * kappa_u ** 2) + scn.sigma2_w * kappa_u ** 2 * eye_svec
    bld.add_nonneg(a, scn.pmax_ris_w, "amp_budget")

    # minimum-SINR rows with the amplified-noise diagonal
    for k in range(K):
        m_k = p[k] * F_svec[k, k] - rbar * (
            sum(p[i] * F_svec[k, i] for i in range(K) if i != k)
            + diag_svec(sig2_d[k]))
        a = bld.row()
        a[sU] = -m_k
        bld.add_nonneg(a, -rbar * delta2s, f"rate_min[{k}]")

    # anchored trace-cut hinge on (U, u)
    a = bld.row()
    a[sU] = eye_svec
    a[sRe] = -2.0 * anchor_us.real
    a[sIm] = -2.0 * anchor_us.imag
    a[sXl] = -1.0
    bld.add_nonneg(a, -float(np.vdot(anchor_us, anchor_us).real), "trace_cut_hinge")
    a = bld.row()
    a[sXl] = -1.0
    bld.add_nonneg(a, 0.0, "trace_cut_hinge_floor")

    if with_alpha:
        # component-wise Big-M rows: +-Re u_n <= M alpha_n, +-Im u_n <= M alpha_n
        for nn in range(N):
            for slc, name in ((sRe, "re"), (sIm, "im")):
                for sgn in (1.0, -1.0):
                    a = bld.row()
                    a[slc.start + nn] = sgn
                    a[sA.start + nn] = -bigm
                    bld.add_nonneg(a, 0.0, f"bigm_{name}[{nn},{int(sgn)}]")
        # anchored on-off hinge: xi_a,n >= alpha_n (1 - 2 abar_n) + abar_n^2
        for nn in range(N):
            a = bld.row()
            a[sA.start + nn] = 1.0 - 2.0 * anchor_alpha[nn]
            a[sXa.start + nn] = -1.0
            bld.add_nonneg(a, -anchor_alpha[nn] ** 2, f"onoff_cut_hinge[{nn}]")
            a = bld.row()
            a[sXa.start + nn] = -1.0
            bld.add_nonneg(a, 0.0, f"onoff_cut_hinge_floor[{nn}]")
        # box 0 <= alpha_n <= 1
        for nn in range(N):
            a = bld.row()
            a[sA.start + nn] = 1.0
            bld.add_nonneg(a, 1.0, f"alpha_ub[{nn}]")
            a = bld.row()
            a[sA.start + nn] = -1.0
            bld.add_nonneg(a, 0.0, f"alpha_lb[{nn}]")
    else:
        for nn in range(N):
            if fixed_alpha[nn] < 0.5:
                a = bld.row()
                a[sRe.start + nn] = 1.0
                bld.add_zero(a, 0.0, f"off_re[{nn}]")
                a = bld.row()
                a[sIm.start + nn] = 1.0
                bld.add_zero(a, 0.0, f"off_im[{nn}]")

    for k in range(K):
        fv = F_svec[k, k]
        blk = np.zeros((3, n))
        blk[0, sU] = -fv
        blk[1, sS.start + k] = -2.0
        blk[2, sU] = -fv
        bld.add_soc(blk, np.array([1.0, 0.0, -1.0]), f"sqrt_epigraph[{k}]")

    A_psd, b_psd = _schur_psd_block(n, N + 1, sU, sRe, sIm)
    bld.add_psd(A_psd, b_psd, N + 1, "schur_lift")

    # objective
    Q = np.zeros((N, N), dtype=np.complex128)
    for k in range(K):
        Q += r[k] ** 2 * (sum(p[i] * F[k, i] for i in range(K)) * kappa_x ** 2
                          + np.diag(scn.sigma2_w * hw2[k] * kappa_u ** 2))
    Q += eta_nats * np.diag((p @ hr2 + scn.sigma2_w) * kappa_u ** 2)
    c = np.zeros(n)
    c[sU] = svec(Q)
    c[sS] = -2.0 * r * np.sqrt((1.0 + t) * p) * kappa_x
    c[sXl] = penalty
    offset = float(np.log1p(t).sum() - t.sum() - (r ** 2).sum() * scn.delta2_w
                   - eta_nats * (p.sum() + K * scn.puser_circ_w + scn.pbs_w))
    if with_alpha:
        c[sA] = eta_nats * (scn.pc_w + scn.pdc_w)
        c[sXa] = penalty
    else:
        offset -= eta_nats * (scn.pc_w + scn.pdc_w) * float(np.sum(fixed_alpha))
    layout = {"U": sU, "u_re": sRe, "u_im": sIm, "alpha": sA, "s": sS,
              "hinge_lift": sXl, "hinge_onoff": sXa}
    meta = {"mode": "active", "x": x, "kappa_u": kappa_u, "kappa_x": kappa_x,
            "p": p.copy(), "r": r.copy(), "t": t.copy(), "eta_nats": eta_nats,
            "anchor_u": anchor_u.copy(), "anchor_alpha": np.asarray(anchor_alpha, dtype=float).copy(),
            "fixed_alpha": None if fixed_alpha is None else np.asarray(fixed_alpha, dtype=float).copy(),
            "hw2": hw2, "hr2": hr2, "rbar": rbar, "N": N, "K": K,
            "pc_pdc": scn.pc_w + scn.pdc_w, "sigma2": scn.sigma2_w,
            "delta2": scn.delta2_w, "pmax_ris": scn.pmax_ris_w,
            "penalty": penalty}
    return bld.finish(c, layout, offset, meta,
                      eps_abs=eps_abs, eps_rel=eps_rel, max_iter=max_iter)


def solve_convex(sub: ConvexSubproblem, warm=None):
    """Solve one subproblem; returns (variables dict, status).

    The variables dict carries the physical quantities (V, v) or
    (U, u, alpha) plus the raw ConicSolution under "conic" for warm
    starting the next round.
    """
    sol = solve_conic(sub.c, sub.A, sub.b, sub.cones,
                      eps_abs=sub.eps_abs, eps_rel=sub.eps_rel,
                      max_iter=sub.max_iter, warm=warm)
    return unpack_solution(sub, sol), sol.status


def unpack_solution(sub: ConvexSubproblem, sol: ConicSolution) -> dict:
    meta = sub.meta
    N = meta["N"]
    out = {"conic": sol, "objective_surrogate": None}
    if meta["mode"] == "passive":
        V = unsvec(sol.x[sub.layout["V"]], N)
        v = sol.x[sub.layout["v_re"]] + 1j * sol.x[sub.layout["v_im"]]
        out["V"] = V
        out["v"] = v
        out["objective_surrogate"] = surrogate_value_passive(sub, V, v)
    else:
        kap_u = meta["kappa_u"]
        U = unsvec(sol.x[sub.layout["U"]], N) * kap_u ** 2
        u = (sol.x[sub.layout["u_re"]] + 1j * sol.x[sub.layout["u_im"]]) * kap_u
        if sub.layout["alpha"] is not None:
            alpha = sol.x[sub.layout["alpha"]].copy()
        else:
            alpha = meta["fixed_alpha"].copy()
        out["U"] = U
        out["u"] = u
        out["alpha"] = alpha
        out["objective_surrogate"] = surrogate_value_active(sub, U, u, alpha)
    return out


def surrogate_value_passive(sub: ConvexSubproblem, V, v):
    """Exact surrogate (nats) at a lifted point: the sqrt terms are
    evaluated directly, not through the epigraph variables."""
    m = sub.meta
    q, p, r, t = m["q"], m["p"], m["r"], m["t"]
    K = m["K"]
    total = 0.0
    for k in range(K):
        own = max(float((q[k, k].conj() @ V @ q[k, k]).real), 0.0)
        received = sum(p[i] * float((q[k, i].conj() @ V @ q[k, i]).real)
                       for i in range(K))
        total += (2.0 * r[k] * math.sqrt((1.0 + t[k]) * p[k] * own)
                  - r[k] ** 2 * received)
    total -= m["eta_nats"] * float(np.abs(v).sum()) * m["pc_w"]
    return total + sub.offset


def surrogate_value_active(sub: ConvexSubproblem, U, u, alpha):
    m = sub.meta
    x, p, r, t = m["x"], m["p"], m["r"], m["t"]
    K = m["K"]
    sig2 = m["sigma2"]
    total = 0.0
    for k in range(K):
        own = max(float((x[k, k].conj() @ U @ x[k, k]).real), 0.0)
        received = sum(p[i] * float((x[k, i].conj() @ U @ x[k, i]).real)
                       for i in range(K))
        amp_noise = sig2 * float((m["hw2"][k] * np.diag(U).real).sum())
        total += (2.0 * r[k] * math.sqrt((1.0 + t[k]) * p[k] * own)
                  - r[k] ** 2 * (received + amp_noise))
    amp_power = float((m["p"] @ m["hr2"] + sig2) @ np.diag(U).real)
    total -= m["eta_nats"] * (m["pc_pdc"] * float(np.sum(alpha)) + amp_power)
    return total + sub.offset


def _radial_rescale_active(sub: ConvexSubproblem, U, u, alpha):
    """Exact line search over a uniform scaling zeta of (u, U).

    The surrogate restricted to (zeta u, zeta^2 U) is A zeta - B zeta^2 +
    const, so the best zeta is closed form; it is clipped to the interval
    where the amplification budget and every minimum-SINR row stay
    feasible.  This removes the slow radial creep of the anchored
    proximal steps when the optimal amplification is far from the anchor.
    Returns (U, u, value) with value = surrogate at the returned point.
    """
    m = sub.meta
    x, p, r, t = m["x"], m["p"], m["r"], m["t"]
    K = m["K"]
    sig2 = m["sigma2"]
    diag_u = np.diag(U).real
    amp_unit = float((p @ m["hr2"] + sig2) @ diag_u)    # amp power at zeta=1
    if amp_unit <= 0:
        return U, u, surrogate_value_active(sub, U, u, alpha)
    A = 0.0
    B = 0.0
    own = np.empty(K)
    quad = np.empty(K)
    for k in range(K):
        own[k] = max(float((x[k, k].conj() @ U @ x[k, k]).real), 0.0)
        received = sum(p[i] * float((x[k, i].conj() @ U @ x[k, i]).real)
                       for i in range(K))
        amp_noise = sig2 * float((m["hw2"][k] * diag_u).sum())
        quad[k] = received + amp_noise
        A += 2.0 * r[k] * math.sqrt((1.0 + t[k]) * p[k] * own[k])
        B += r[k] ** 2 * quad[k]
    B += m["eta_nats"] * amp_unit
    z_hi = math.sqrt(m["pmax_ris"] / amp_unit)
    # smallest zeta keeping every SINR row feasible: the rows are affine
    # increasing in zeta^2 whenever their unit-scale margin is positive
    z_lo = 0.0
    rbar = m["rbar"]
    for k in range(K):
        margin = p[k] * own[k] - rbar * (quad[k] - p[k] * own[k])
        if margin <= 0.0:
            return U, u, surrogate_value_active(sub, U, u, alpha)
        z_lo = max(z_lo, math.sqrt(rbar * m["delta2"] / margin))
    if z_lo > z_hi:
        return U, u, surrogate_value_active(sub, U, u, alpha)
    zeta = A / (2.0 * B) if B > 0 else z_hi
    zeta = min(max(zeta, z_lo, 0.0), z_hi)
    base = surrogate_value_active(sub, U, u, alpha)
    scaled = surrogate_value_active(sub, zeta ** 2 * U, zeta * u, alpha)
    if scaled > base:
        return zeta ** 2 * U, zeta * u, scaled
    return U, u, base


def anchor_tightness_passive(sub: ConvexSubproblem):
    """Gap of each anchored cut at its own anchor (0 when the anchor is a
    point of the original set: binary moduli for the binary cut)."""
    a = sub.meta["anchor"]
    binary = np.abs(a) - np.abs(a) ** 2
    trace = 0.0  # Tr(abar abar^H) - ||abar||^2 is identically zero
    return {"binary_cut": binary, "trace_cut": trace}


def constraint_violations_passive(sub: ConvexSubproblem, V, v, scn, state):
    """Worst-case original-constraint residuals at (V, v), >= 0 is feasible."""
    m = sub.meta
    q, p = m["q"], m["p"]
    K = m["K"]
    rbar = m["rbar"]
    out = {}
    vals = np.empty(K)
    for k in range(K):
        own = p[k] * float((q[k, k].conj() @ V @ q[k, k]).real)
        interf = sum(p[i] * float((q[k, i].conj() @ V @ q[k, i]).real)
                     for i in range(K) if i != k)
        vals[k] = own - rbar * (interf + scn.delta2_w)
    out["rate_min"] = vals
    out["modulus"] = 1.0 + 1e-12 - np.abs(v)
    out["trace_cut"] = (2.0 * float(np.vdot(m["anchor"], v).real)
                        - float(np.vdot(m["anchor"], m["anchor"]).real)
                        - float(np.trace(V).real))
    return out


@dataclass
class ScaResult:
    """Converged lifted variables plus the per-round surrogate trace."""

    v: np.ndarray            # passive: v; active: u
    lift: np.ndarray         # V or U
    alpha: np.ndarray | None
    trace: list
    status: str              # converged | max_rounds | infeasible
    lifted_gap: float        # Tr(lift - vv^H) / max(Tr(lift), tiny)
    solver_iters: int = 0
    warm: dict | None = None


def _lifted_gap(lift, vec):
    tr = float(np.trace(lift).real)
    gap = tr - float(np.vdot(vec, vec).real)
    return gap / max(tr, 1e-300)


PENALTY_RAMP = 2.0
PENALTY_CAP_FACTOR = 32.0


def sca_passive(scn: Scenario, state, fp: FpState, *, rounds=20,
                rel_tol=1e-5, mono_tol=1e-8, penalty=DEFAULT_PENALTY,
                eps_abs=1e-6, eps_rel=1e-6, max_iter=5000,
                warm_cache=None) -> ScaResult:
    """Iterate build + solve + re-anchor until the surrogate stalls.

    The hinge weight ramps by PENALTY_RAMP per round (capped), so early
    rounds move freely and late rounds pin the relaxation to the anchor.
    A round whose solution drops the surrogate below the incumbent minus
    mono_tol is discarded and iteration stops, which enforces the
    monotone-surrogate contract under inexact subproblem solves.
    """
    anchor = state.reflection().astype(np.complex128)
    q = _cascade_outer_products(scn, state.w)
    kappa = max(float(np.linalg.norm(q[k, k])) for k in range(scn.K))
    kappa = max(kappa * math.sqrt(scn.N), 1e-300)

    best_v = anchor.copy()
    best_V = np.outer(anchor, anchor.conj())
    sub0 = build_passive_subproblem(scn, state, fp, anchor, kappa=kappa,
                                    penalty=penalty, eps_abs=eps_abs,
                                    eps_rel=eps_rel, max_iter=max_iter)
    best_val = surrogate_value_passive(sub0, best_V, best_v)
    trace = [best_val]
    warm = warm_cache.get("passive") if warm_cache is not None else None
    if warm is not None and warm["x"].shape != (sub0.n,):
        warm = None
    status = "max_rounds"
    iters = 0
    mu = penalty
    for _ in range(rounds):
        sub = build_passive_subproblem(scn, state, fp, best_v, kappa=kappa,
                                       penalty=mu, eps_abs=eps_abs,
                                       eps_rel=eps_rel, max_iter=max_iter)
        sol, sol_status = solve_convex(sub, warm=warm)
        iters += sol["conic"].iterations
        if sol_status == "infeasible":
            status = "infeasible"
            break
        warm = sol["conic"].warm_data()
        val = sol["objective_surrogate"]
        scale = max(1.0, abs(best_val))
        if val < best_val - mono_tol * scale:
            status = "converged"
            break
        improved = val - best_val
        best_v, best_V, best_val = sol["v"], sol["V"], val
        trace.append(val)
        if improved <= rel_tol * scale:
            status = "converged"
            break
        mu = min(mu * PENALTY_RAMP, penalty * PENALTY_CAP_FACTOR)
    if warm_cache is not None and warm is not None:
        warm_cache["passive"] = warm
    return ScaResult(v=best_v, lift=best_V, alpha=None, trace=trace,
                     status=status, lifted_gap=_lifted_gap(best_V, best_v),
                     solver_iters=iters, warm=warm)


def sca_active(scn: Scenario, state, fp: FpState, *, rounds=20,
               rel_tol=1e-5, mono_tol=1e-8, penalty=DEFAULT_PENALTY,
               eps_abs=1e-6, eps_rel=1e-6, max_iter=5000,
               fixed_alpha=None, warm_cache=None) -> ScaResult:
    """Active-surface SCA over (U, u, alpha); with fixed_alpha this is the
    continuous polish loop."""
    anchor_u = (state.alpha * state.rho * np.exp(-1j * state.theta)).astype(np.complex128)
    anchor_alpha = state.alpha.astype(float).copy()
    if fixed_alpha is not None:
        fixed_alpha = np.asarray(fixed_alpha, dtype=float)
        anchor_u = anchor_u * (fixed_alpha > 0.5)
    x = _conj_cascade_factors(scn, state.w)
    kappa_u = max(1.0, float(np.abs(anchor_u).max(initial=0.0)))
    kappa_x = max(max(float(abs(np.vdot(x[k, k], anchor_u)))
                      for k in range(scn.K)), 1e-300)

    best_u = anchor_u.copy()
    best_U = np.outer(anchor_u, anchor_u.conj())
    best_alpha = anchor_alpha if fixed_alpha is None else fixed_alpha.copy()
    sub0 = build_active_subproblem(scn, state, fp, best_u, best_alpha,
                                   fixed_alpha=fixed_alpha, penalty=penalty,
                                   kappa_u=kappa_u, kappa_x=kappa_x,
                                   eps_abs=eps_abs, eps_rel=eps_rel,
                                   max_iter=max_iter)
    best_val = surrogate_value_active(sub0, best_U, best_u, best_alpha)
    trace = [best_val]
    cache_key = "active_fixed" if fixed_alpha is not None else "active"
    warm = warm_cache.get(cache_key) if warm_cache is not None else None
    if warm is not None and warm["x"].shape != (sub0.n,):
        warm = None
    status = "max_rounds"
    iters = 0
    mu = penalty
    for _ in range(rounds):
        sub = build_active_subproblem(scn, state, fp, best_u, best_alpha,
                                      fixed_alpha=fixed_alpha, penalty=mu,
                                      kappa_u=kappa_u, kappa_x=kappa_x,
                                      eps_abs=eps_abs, eps_rel=eps_rel,
                                      max_iter=max_iter)
        sol, sol_status = solve_convex(sub, warm=warm)
        iters += sol["conic"].iterations
        if sol_status == "infeasible":
            status = "infeasible"
            break
        warm = sol["conic"].warm_data()
        U_new, u_new, val = _radial_rescale_active(sub, sol["U"], sol["u"],
                                                   sol["alpha"])
        scale = max(1.0, abs(best_val))
        if val < best_val - mono_tol * scale:
            status = "converged"
            break
        improved = val - best_val
        best_u, best_U, best_alpha, best_val = u_new, U_new, sol["alpha"], val
        trace.append(val)
        if improved <= rel_tol * scale:
            status = "converged"
            break
        mu = min(mu * PENALTY_RAMP, penalty * PENALTY_CAP_FACTOR)
    if warm_cache is not None and warm is not None:
        warm_cache[cache_key] = warm
    return ScaResult(v=best_u, lift=best_U, alpha=best_alpha, trace=trace,
                     status=status, lifted_gap=_lifted_gap(best_U, best_u),
                     solver_iters=iters, warm=warm)


def round_passive(v):
    """Recover binary bits and phases from a relaxed reflection vector:
    element on iff |v_n| >= 0.5, theta from arg(v_n) (0 when off)."""
    v = np.asarray(v)
    beta = (np.abs(v) >= 0.5).astype(float)
    theta = np.where(beta > 0.5, np.angle(v), 0.0)
    return beta, theta


def round_active(u, alpha_relaxed):
    """Invert diag(u^H) = A Lam Theta after thresholding the relaxed bits:
    on elements get rho = |u_n| and theta = -arg(u_n)."""
    u = np.asarray(u)
    alpha = (np.asarray(alpha_relaxed) >= 0.5).astype(float)
    on = alpha > 0.5
    rho = np.where(on, np.abs(u), 0.0)
    theta = np.where(on & (rho > 0), -np.angle(u), 0.0)
    return alpha, rho, theta


def recover_passive(scn, state, fp, sca: ScaResult, audit_tol=1e-6,
                    warm_cache=None):
    """Round an SCA output and audit feasibility of the rounded state.

    On violation, re-solve with the rounded anchor (polish); if that is
    infeasible, flip the smallest-modulus on-element off and retry, at
    most N times.  Returns (beta, theta, status)."""
    beta, theta = round_passive(sca.v)
    for _ in range(scn.N + 1):
        candidate = state.copy()
        candidate.beta, candidate.theta = beta, theta
        report = models.check_constraints(scn, candidate)
        if report.min_residual >= -audit_tol:
            return beta, theta, "ok"
        polish = sca_passive(scn, candidate, fp, rounds=1,
                             warm_cache=warm_cache)
        if polish.status != "infeasible":
            beta, theta = round_passive(polish.v)
            candidate = state.copy()
            candidate.beta, candidate.theta = beta, theta
            if models.check_constraints(scn, candidate).min_residual >= -audit_tol:
                return beta, theta, "ok"
        on = np.flatnonzero(beta > 0.5)
        if on.size == 0:
            break
        weakest = on[np.argmin(np.abs(sca.v[on]))]
        beta = beta.copy()
        beta[weakest] = 0.0
        theta = np.where(beta > 0.5, theta, 0.0)
    return beta, theta, "infeasible"


def recover_active(scn, state, fp, sca: ScaResult, audit_tol=1e-6,
                   polish_kwargs=None, warm_cache=None):
    """Threshold alpha, run one continuous polish solve with alpha fixed,
    then audit; infeasible polishes flip the weakest on-element.

    Returns (alpha, rho, theta, status)."""
    polish_kwargs = polish_kwargs or {}
    alpha, rho, theta = round_active(sca.v, sca.alpha)
    for _ in range(scn.N + 1):
        candidate = state.copy()
        candidate.alpha, candidate.rho, candidate.theta = alpha, rho, theta
        polish = sca_active(scn, candidate, fp, rounds=1,
                            fixed_alpha=alpha, warm_cache=warm_cache,
                            **polish_kwargs)
        if polish.status != "infeasible":
            alpha2, rho2, theta2 = round_active(polish.v, alpha)
            cand2 = state.copy()
            cand2.alpha, cand2.rho, cand2.theta = alpha2, rho2, theta2
            if models.check_constraints(scn, cand2).min_residual >= -audit_tol:
                return alpha2, rho2, theta2, "ok"
        if models.check_constraints(scn, candidate).min_residual >= -audit_tol:
            return alpha, rho, theta, "ok"
        on = np.flatnonzero(alpha > 0.5)
        if on.size == 0:
            break
        weakest = on[np.argmin(np.abs(sca.v[on]))]
        alpha = alpha.copy()
        alpha[weakest] = 0.0
        rho = np.where(alpha > 0.5, rho, 0.0)
        theta = np.where(alpha > 0.5, theta, 0.0)
    return alpha, rho, theta, "infeasible"
