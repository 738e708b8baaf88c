"""First-order operator-splitting solver for small conic programs.

Canonical form:

    minimize    c' x
    subject to  A x + s = b,   s in K,

with K a product of a zero cone, the nonnegative orthant, second-order
cones, and Hermitian PSD cones (vectorized; see svec below).  This is the
workhorse behind the lifted reflecting-surface subproblems: a plain ADMM
splitting whose s-step is a cone projection, with the PSD part delegated
to numerics.project_psd.

Updates (scaled dual y, step rho, proximal weight sig, relaxation alpha):

    x+ = (sig I + rho A'A)^-1 (sig x + rho A'(b - s - y) - c)
    h  = alpha A x+ + (1 - alpha)(b - s)
    s+ = Pi_K(b - h - y)
    y+ = y + h + s+ - b

Problem data are Ruiz-equilibrated before iterating (uniform scaling
within each SOC/PSD block so cone membership is preserved).  Warm starts
are accepted in solver units of the unscaled problem.

The (s, y) pair is a fixed point of one sweep exactly at optimality, so
the loop wraps the sweep in safeguarded type-II Anderson acceleration:
an accelerated candidate is kept only when it shrinks the fixed-point
residual, which removes the sublinear tail ADMM exhibits on degenerate
instances while never breaking plain-ADMM convergence.

Infeasibility has no exact certificate in this splitting; a subproblem is
declared infeasible when the iteration budget is exhausted with the best
primal residual still above a floor that converged problems sit far
below.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .numerics import project_psd

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class ConeSpec:
    """Cone sizes in row order: zero, nonneg, then SOC blocks, then
    Hermitian PSD blocks (order h occupies h*h rows)."""

    zero: int = 0
    nonneg: int = 0
    soc: tuple = ()
    psd: tuple = ()

    @property
    def total(self):
        return (self.zero + self.nonneg + sum(self.soc)
                + sum(h * h for h in self.psd))


def svec(A):
    """Inner-product-preserving real vectorization of a Hermitian matrix:
    [diag; sqrt(2) Re upper; sqrt(2) Im upper], so svec(A).svec(B) equals
    Re Tr(A B) for Hermitian A, B."""
    h = A.shape[0]
    iu = np.triu_indices(h, 1)
    upper = A[iu]
    return np.concatenate([A.diagonal().real, _SQRT2 * upper.real,
                           _SQRT2 * upper.imag])


def unsvec(v, h):
    """Inverse of svec for order h."""
    iu = np.triu_indices(h, 1)
    npairs = iu[0].size
    A = np.zeros((h, h), dtype=np.complex128)
    A[np.diag_indices(h)] = v[:h]
    upper = (v[h:h + npairs] + 1j * v[h + npairs:]) / _SQRT2
    A[iu] = upper
    A[(iu[1], iu[0])] = upper.conj()
    return A


def _project_soc(v):
    t, z = v[0], v[1:]
    nz = np.linalg.norm(z)
    if nz <= t:
        return v
    if nz <= -t:
        return np.zeros_like(v)
    coef = 0.5 * (1.0 + t / nz)
    out = np.empty_like(v)
    out[0] = coef * nz
    out[1:] = coef * z
    return out


class _ConePlan:
    """Precomputed indices so the per-iteration projection is vectorized:
    all equal-size SOC blocks are projected as one batch, and the PSD
    svec/unsvec index arrays are built once."""

    def __init__(self, cones: ConeSpec):
        self.cones = cones
        i = cones.zero + cones.nonneg
        self.lin_end = i
        by_dim = {}
        self.soc_other = []
        for q in cones.soc:
            by_dim.setdefault(q, []).append(i)
            i += q
        self.soc_batches = [
            (dim, np.asarray(starts)[:, None] + np.arange(dim)[None, :])
            for dim, starts in by_dim.items()]
        self.psd = []
        for h in cones.psd:
            iu = np.triu_indices(h, 1)
            self.psd.append((i, h, iu))
            i += h * h

    def project(self, v):
        c = self.cones
        out = np.empty_like(v)
        out[:c.zero] = 0.0
        out[c.zero:self.lin_end] = np.maximum(v[c.zero:self.lin_end], 0.0)
        for dim, idx in self.soc_batches:
            blocks = v[idx]                       # (nblk, dim)
            t = blocks[:, 0]
            z = blocks[:, 1:]
            nz = np.sqrt((z * z).sum(axis=1))
            proj = blocks.copy()
            outside = nz > t
            dead = nz <= -t
            scale = 0.5 * (1.0 + t / np.where(nz > 0, nz, 1.0))
            proj[outside, 0] = (scale * nz)[outside]
            proj[outside, 1:] = z[outside] * scale[outside, None]
            proj[dead] = 0.0
            out[idx] = proj
        for start, h, iu in self.psd:
            block = _unsvec_cached(v[start:start + h * h], h, iu)
            out[start:start + h * h] = _svec_cached(project_psd(block), iu)
        return out


def _svec_cached(A, iu):
    upper = A[iu]
    return np.concatenate([A.diagonal().real, _SQRT2 * upper.real,
                           _SQRT2 * upper.imag])


def _unsvec_cached(v, h, iu):
    npairs = iu[0].size
    A = np.zeros((h, h), dtype=np.complex128)
    A[np.diag_indices(h)] = v[:h]
    upper = (v[h:h + npairs] + 1j * v[h + npairs:]) / _SQRT2
    A[iu] = upper
    A[(iu[1], iu[0])] = upper.conj()
    return A


def _row_groups(cones: ConeSpec):
    """Index groups that must share one scaling factor."""
    groups = []
    i = 0
    for _ in range(cones.zero + cones.nonneg):
        groups.append(np.array([i]))
        i += 1
    for q in cones.soc:
        groups.append(np.arange(i, i + q))
        i += q
    for h in cones.psd:
        groups.append(np.arange(i, i + h * h))
        i += h * h
    return groups


def _equilibrate(A, b, c, cones, iters=8):
    """Ruiz scaling with cone-block-uniform row factors.

    Returns (A', b', c', d_row, e_col) with A' = D A E, b' = D b,
    c' = E c."""
    m, n = A.shape
    d = np.ones(m)
    e = np.ones(n)
    A = A.copy()
    groups = _row_groups(cones)
    for _ in range(iters):
        for grp in groups:
            g = np.abs(A[grp, :]).max(initial=0.0)
            if g > 0:
                f = 1.0 / np.sqrt(g)
                d[grp] *= f
                A[grp, :] *= f
        col = np.abs(A).max(axis=0)
        nz = col > 0
        f = np.ones(n)
        f[nz] = 1.0 / np.sqrt(col[nz])
        e *= f
        A *= f[np.newaxis, :]
    return A, b * d, c * e, d, e


class _Anderson:
    """Safeguarded type-II Anderson acceleration on a fixed-point map."""

    def __init__(self, dim, memory=8):
        self.memory = memory
        self.w_hist = []
        self.g_hist = []

    def reset(self):
        self.w_hist.clear()
        self.g_hist.clear()

    def push(self, w, g):
        self.w_hist.append(w)
        self.g_hist.append(g)
        if len(self.w_hist) > self.memory + 1:
            self.w_hist.pop(0)
            self.g_hist.pop(0)

    def candidate(self):
        """Accelerated point from the current history, or None."""
        k = len(self.g_hist)
        if k < 3:
            return None
        dG = np.stack([self.g_hist[i + 1] - self.g_hist[i]
                       for i in range(k - 1)], axis=1)
        dF = np.stack([(self.w_hist[i + 1] + self.g_hist[i + 1])
                       - (self.w_hist[i] + self.g_hist[i])
                       for i in range(k - 1)], axis=1)
        gamma, *_ = np.linalg.lstsq(dG, self.g_hist[-1], rcond=None)
        acc = (self.w_hist[-1] + self.g_hist[-1]) - dF @ gamma
        if not np.all(np.isfinite(acc)):
            return None
        return acc


@dataclass
class ConicSolution:
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    status: str          # converged | max_iter | infeasible
    iterations: int
    pri_res: float       # scaled-problem residuals at exit
    dua_res: float
    obj: float

    def warm_data(self):
        return {"x": self.x, "s": self.s, "y": self.y}


def solve_conic(c, A, b, cones: ConeSpec, *, eps_abs=1e-6, eps_rel=1e-6,
                max_iter=5000, warm=None, rho=1.0, alpha=1.6,
                infeas_floor=1e-4):
    """Run the splitting until primal and dual residuals pass eps or the
    iteration budget runs out.  warm is a dict from ConicSolution.warm_data
    of a structurally identical problem."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    if cones.total != m:
        raise ValueError(f"cone sizes sum to {cones.total}, expected {m} rows")

    As, bs, cs, d_row, e_col = _equilibrate(A, b, c, cones)

    x = np.zeros(n)
    s = bs.copy()
    y = np.zeros(m)
    if (warm is not None and warm["x"].shape == (n,)
            and warm["s"].shape == (m,) and warm["y"].shape == (m,)):
        x = warm["x"] / e_col
        s = warm["s"] * d_row
        y = warm["y"] / d_row

    sig = 1e-8
    AtA = As.T @ As

    def factorize(step):
        lhs = AtA * step
        lhs[np.diag_indices(n)] += sig
        return cho_factor(lhs)

    factor = factorize(rho)

    plan = _ConePlan(cones)

    def sweep(s_in, y_in, x_in):
        """One ADMM pass; returns (x, s, y, Ax)."""
        rhs = sig * x_in + rho * (As.T @ (bs - s_in - y_in)) - cs
        x_new = cho_solve(factor, rhs)
        Ax = As @ x_new
        h = alpha * Ax + (1.0 - alpha) * (bs - s_in)
        s_new = plan.project(bs - h - y_in)
        y_new = y_in + h + s_new - bs
        return x_new, s_new, y_new, Ax

    scale_ref = max(np.linalg.norm(bs), 1.0)
    accel = _Anderson(2 * m)
    best = None
    best_pri = np.inf
    pri = dua = np.inf
    it = 0
    check_every = 25
    for it in range(1, max_iter + 1):
        s_prev = s
        w = np.concatenate([s, y])
        x, s, y, Ax = sweep(s, y, x)
        accel.push(w, np.concatenate([s, y]) - w)

        acc = accel.candidate()
        if acc is not None:
            s_acc, y_acc = acc[:m], acc[m:]
            x_acc, s_acc2, y_acc2, Ax_acc = sweep(s_acc, y_acc, x)
            g_acc = np.concatenate([s_acc2 - s_acc, y_acc2 - y_acc])
            if np.linalg.norm(g_acc) < np.linalg.norm(np.concatenate([s, y]) - w):
                x, s, y, Ax = x_acc, s_acc2, y_acc2, Ax_acc
                accel.push(np.concatenate([s_acc, y_acc]), g_acc)

        if it % check_every == 0 or it == max_iter:
            pri = np.linalg.norm(Ax + s - bs)
            dua = rho * np.linalg.norm(As.T @ (s - s_prev))
            eps_pri = eps_abs * np.sqrt(m) + eps_rel * max(
                np.linalg.norm(Ax), np.linalg.norm(s), np.linalg.norm(bs))
            eps_dua = eps_abs * np.sqrt(n) + eps_rel * rho * np.linalg.norm(As.T @ y)
            if pri < best_pri:
                best_pri = pri
                best = (x.copy(), s.copy(), y.copy())
            if pri <= eps_pri and dua <= eps_dua:
                status = "converged"
                break
            # Residual balancing: grow rho when the primal residual lags,
            # shrink when the dual does.  y is the scaled dual, so it is
            # rescaled inversely with rho; the acceleration history refers
            # to the old map and is dropped.
            ratio = (pri / max(eps_pri, 1e-300)) / max(dua / max(eps_dua, 1e-300), 1e-300)
            if ratio > 10.0 and rho < 1e8:
                rho *= 5.0
                y /= 5.0
                factor = factorize(rho)
                accel.reset()
            elif ratio < 0.1 and rho > 1e-8:
                rho /= 5.0
                y *= 5.0
                factor = factorize(rho)
                accel.reset()
    else:
        status = "max_iter"

    if status == "max_iter" and best is not None:
        x, s, y = best
        if best_pri > infeas_floor * scale_ref:
            status = "infeasible"

    x_out = x * e_col
    return ConicSolution(
        x=x_out,
        s=s / d_row,
        y=y * d_row,
        status=status,
        iterations=it,
        pri_res=float(pri),
        dua_res=float(dua),
        obj=float(c @ x_out),
    )
