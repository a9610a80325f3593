"""Per-bin filter design: closed-form MWF and BFGS on the augmented cost.

All bins are independent problems.  They are solved together in one batched
BFGS loop: every array carries a leading bin axis and bins that have stopped
are frozen while the rest continue, so each bin's trajectory is the same as
if it were solved alone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from . import costs
from .costs import FilterBank, PenaltyKind, WeightSchedule
from .errors import DimensionError, SolverError


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 500
    grad_tol: float = 1e-8
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    # objective stationarity: stop when J_T fell by no more than
    # ftol * (1 + |J_T|) over the last ``ftol_window`` accepted iterations
    ftol: float = 1e-13
    ftol_window: int = 10
    # closed-form start only: size of the push into the directions phi_x
    # does not reach (see _kick)
    null_kick: float = 1e-3
    # phi_x directions below this fraction of its largest (phi_v-relative)
    # eigenvalue count as speech-free for the kick and the gauge choice
    null_rtol: float = 1e-8
    # Newton steps after BFGS (0 disables), and their finite-difference step
    refine_iters: int = 50
    fd_step: float = 1e-6
    init: str = "closed-form-MWF"
    # start from the inverse MWF Hessian instead of the identity
    precondition: bool = True

    def __post_init__(self):
        if not (self.grad_tol > 0 and self.c1 > 0 and 0 < self.backtrack < 1):
            raise ValueError("tolerances must be positive and backtrack in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.ftol < 0 or self.ftol_window < 1:
            raise ValueError("ftol must be >= 0 and ftol_window >= 1")
        if self.init not in ("closed-form-MWF", "Q", "zeros", "given"):
            raise ValueError(f"unknown init {self.init!r}")


class Method(enum.Enum):
    MWF = "MWF"
    MWF_ITF = "MWF-ITF"
    MWF_ITF_R = "MWF-ITF-R"


@dataclass
class MethodSpec:
    method: Method
    kinds: tuple = ()
    schedule: WeightSchedule | None = None

    def __post_init__(self):
        self.method = Method(self.method)
        self.kinds = tuple(PenaltyKind.parse(k) for k in self.kinds)
        if self.method is Method.MWF and self.kinds:
            raise ValueError("plain MWF takes no penalty terms")
        if self.method is not Method.MWF and (not self.kinds or self.schedule is None):
            raise ValueError(f"{self.method.value} needs penalty kinds and a weight schedule")
        if self.schedule is not None:
            want_dynamic = self.method is Method.MWF_ITF_R
            if self.method is not Method.MWF and self.schedule.dynamic != want_dynamic:
                raise ValueError(f"{self.method.value} requires dynamic={want_dynamic}")

    @classmethod
    def mwf(cls) -> "MethodSpec":
        return cls(Method.MWF)

    @classmethod
    def mwf_itf(cls, beta, kinds=(PenaltyKind.ITF,)) -> "MethodSpec":
        """Fixed weights: ``alpha(k) = beta(k)``."""
        return cls(Method.MWF_ITF, kinds, WeightSchedule(beta, dynamic=False))

    @classmethod
    def mwf_itf_r(cls, beta, kinds=(PenaltyKind.ITF,)) -> "MethodSpec":
        """Dynamic weights: ``alpha(k) = beta(k) * g_sq(k)``."""
        return cls(Method.MWF_ITF_R, kinds, WeightSchedule(beta, dynamic=True))

    def alpha(self, g_sq) -> np.ndarray:
        g_sq = np.asarray(g_sq, dtype=float)
        if self.schedule is None:
            return np.zeros_like(g_sq)
        return np.broadcast_to(self.schedule.alpha(g_sq), g_sq.shape).astype(float)


@dataclass
class Diagnostics:
    j_total: np.ndarray
    j_mwf: np.ndarray
    penalties: dict = field(default_factory=dict)
    iterations: np.ndarray | None = None
    status: np.ndarray | None = None
    trace: list | None = None

    @property
    def converged(self) -> np.ndarray:
        """Bins that met the gradient or the stationarity test (or need no solve)."""
        return np.isin(self.status, ("converged", "stationary", "passthrough"))

    def __getitem__(self, k):
        return Diagnostics(self.j_total[k], self.j_mwf[k],
                           {kk: v[k] for kk, v in self.penalties.items()},
                           None if self.iterations is None else self.iterations[k],
                           None if self.status is None else self.status[k])


def _realrep(phi):
    """Real ``2M x 2M`` matrix acting on ``[Re w, Im w]`` like ``phi`` acts on ``w``."""
    re, im = phi.real, phi.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def _ridged(phi_y):
    m = phi_y.shape[-1]
    tr = np.real(np.einsum("...ii->...", phi_y))
    cond = np.linalg.cond(phi_y)
    need = ~(cond < 1e12)
    eps = np.where(need, 1e-10 * tr / m, 0.0)
    return phi_y + eps[..., None, None] * np.eye(m)


def solve_mwf_closed_form(phi_x, phi_v, q_l, q_r):
    """``w_l = (phi_x + phi_v)^-1 phi_x q_l`` per bin, with a small ridge when singular."""
    phi_x = np.asarray(phi_x, dtype=complex)
    phi_v = np.asarray(phi_v, dtype=complex)
    if phi_x.shape != phi_v.shape:
        raise DimensionError("phi_x and phi_v shapes differ")
    a = _ridged(phi_x + phi_v)
    rhs = np.stack([np.einsum("...ij,j->...i", phi_x, np.asarray(q, dtype=complex))
                    for q in (q_l, q_r)], axis=-1)
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError("phi_x + phi_v is singular even after ridge") from exc
    if not np.all(np.isfinite(sol)):
        raise SolverError("phi_x + phi_v is singular even after ridge")
    return sol[..., 0], sol[..., 1]


def bfgs(fun, x0, h0=None, opts: SolverOptions = SolverOptions(), record=False):
    """Batched BFGS with Armijo backtracking.

    The gradient test uses the ``h0`` norm ``sqrt(g^T h0 g)`` (Euclidean when
    ``h0`` is None), so a good ``h0`` makes it insensitive to the scaling of
    the coordinates.  ``fun(x)`` maps ``(B, n)`` points to ``(f (B,), grad (B, n))``.  Returns
    ``(x, f, iterations, status, trace)`` where status is one of
    ``"converged"`` (gradient test), ``"stationary"`` (objective stopped
    decreasing, see ``SolverOptions.ftol``), ``"stalled"`` (no representable
    decrease left) or ``"max_iters"``; ``trace`` lists accepted objective
    values per problem when ``record`` is set.
    """
    x = np.array(x0, dtype=float)
    nb, n = x.shape
    eye = np.broadcast_to(np.eye(n), (nb, n, n))
    h0 = eye.copy() if h0 is None else np.array(h0, dtype=float)
    h = h0.copy()
    with np.errstate(all="ignore"):
        f, g = fun(x)
    if not np.all(np.isfinite(f)):
        bad = int(np.flatnonzero(~np.isfinite(f))[0])
        raise SolverError("non-finite cost at the initial point", bin_index=bad, iterate=x[bad])
    iters = np.zeros(nb, dtype=int)
    status = np.full(nb, "max_iters", dtype=object)
    active = np.ones(nb, dtype=bool)
    trace = [[fi] for fi in f] if record else None
    def gnorm_of(g, rows=slice(None)):
        return np.sqrt(np.abs(np.einsum("bi,bij,bj->b", g, h0[rows], g)))

    win = opts.ftol_window
    # ring buffers of accepted objective values and gradient norms
    hist = np.tile(f, (win + 1, 1))
    ghist = np.tile(gnorm_of(g), (win + 1, 1))

    for _ in range(opts.max_iters):
        gnorm = gnorm_of(g)
        done = active & (gnorm <= opts.grad_tol * (1.0 + np.abs(f)))
        status[done] = "converged"
        active &= ~done
        if not active.any():
            break
        idx = np.flatnonzero(active)
        p = -np.einsum("bij,bj->bi", h[idx], g[idx])
        slope = np.einsum("bi,bi->b", p, g[idx])
        reset = ~(slope < 0)
        if reset.any():
            r = idx[reset]
            h[r] = h0[r]
            p[reset] = -np.einsum("bij,bj->bi", h0[r], g[r])
            slope[reset] = np.einsum("bi,bi->b", p[reset], g[r])
            if not np.all(slope < 0):
                bad = int(idx[np.flatnonzero(~(slope < 0))[0]])
                raise SolverError("no descent direction", bin_index=bad, iterate=x[bad])

        t = np.ones(len(idx))
        pending = np.ones(len(idx), dtype=bool)
        x_new = x[idx].copy()
        f_new = f[idx].copy()
        g_new = g[idx].copy()
        seen_finite = np.zeros(len(idx), dtype=bool)
        for _bt in range(opts.max_backtracks):
            j = np.flatnonzero(pending)
            trial = x[idx[j]] + t[j, None] * p[j]
            with np.errstate(all="ignore"):
                ft, gt = fun_subset(fun, x, idx[j], trial)
            finite = np.isfinite(ft) & np.all(np.isfinite(gt), axis=1)
            seen_finite[j] |= finite
            ok = finite & (ft <= f[idx[j]] + opts.c1 * t[j] * slope[j])
            acc = j[ok]
            x_new[acc], f_new[acc], g_new[acc] = trial[ok], ft[ok], gt[ok]
            pending[acc] = False
            if not pending.any():
                break
            t[pending] *= opts.backtrack
        if pending.any() and not seen_finite[pending].all():
            bad = int(idx[np.flatnonzero(pending & ~seen_finite)[0]])
            raise SolverError("non-finite cost throughout the line search",
                              bin_index=bad, iterate=x[bad])
        # bins whose line search found no acceptable step are at the
        # floating-point floor of their objective
        stalled = idx[pending]
        status[stalled] = "stalled"
        active[stalled] = False

        moved = ~pending
        mi = idx[moved]
        s = x_new[moved] - x[mi]
        yv = g_new[moved] - g[mi]
        sy = np.einsum("bi,bi->b", s, yv)
        upd = sy > 1e-12 * np.linalg.norm(s, axis=1) * np.linalg.norm(yv, axis=1)
        if upd.any():
            u = mi[upd]
            rho = 1.0 / sy[upd]
            su, yu = s[upd], yv[upd]
            hu = h[u]
            hy = np.einsum("bij,bj->bi", hu, yu)
            yhy = np.einsum("bi,bi->b", yu, hy)
            h[u] = (hu
                    - rho[:, None, None] * (np.einsum("bi,bj->bij", su, hy)
                                            + np.einsum("bi,bj->bij", hy, su))
                    + (rho ** 2 * yhy + rho)[:, None, None] * np.einsum("bi,bj->bij", su, su))
        x[mi], f[mi], g[mi] = x_new[moved], f_new[moved], g_new[moved]
        iters[mi] += 1
        slot, oldest = iters[mi] % (win + 1), (iters[mi] + 1) % (win + 1)
        hist[slot, mi] = f[mi]
        ghist[slot, mi] = gnorm_of(g[mi], mi)
        flat = ((iters[mi] >= win)
                & (hist[oldest, mi] - f[mi] <= opts.ftol * (1.0 + np.abs(f[mi])))
                & (ghist[slot, mi] >= 0.5 * ghist[oldest, mi]))
        status[mi[flat]] = "stationary"
        active[mi[flat]] = False
        if record:
            for b, fb in zip(mi, f_new[moved]):
                trace[b].append(fb)
    else:
        gnorm = gnorm_of(g)
        done = active & (gnorm <= opts.grad_tol * (1.0 + np.abs(f)))
        status[done] = "converged"
    return x, f, iters, status, trace


def newton_refine(fun, x, h0=None, opts: SolverOptions = SolverOptions()):
    """A few safeguarded Newton steps from ``x`` (batched like :func:`bfgs`).

    The Hessian is the central difference of the analytic gradient taken in
    coordinates whitened by ``h0``.  Directions with (near) zero curvature are
    left alone and negative curvature is flipped.  A (backtracked) step is
    kept if it passes the Armijo test, or if the cost is flat to rounding and
    the whitened gradient at least halves; the second rule pins the minimiser
    down to the accuracy of the gradient where function comparisons no
    longer resolve anything.  Returns
    ``(x, f, gnorm, steps)``.
    """
    x = np.array(x, dtype=float)
    nb, n = x.shape
    chol = (np.broadcast_to(np.eye(n), (nb, n, n)) if h0 is None
            else np.linalg.cholesky(np.asarray(h0, dtype=float)))
    with np.errstate(all="ignore"):
        f, g = fun(x)
    gz = np.einsum("bji,bj->bi", chol, g)
    gn = np.linalg.norm(gz, axis=1)
    steps = np.zeros(nb, dtype=int)
    active = np.isfinite(f) & (gn > 0)
    h = opts.fd_step
    eps = np.finfo(float).eps
    for _ in range(opts.refine_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        b = chol[idx]
        cols = []
        for i in range(n):
            d = h * b[:, :, i]
            with np.errstate(all="ignore"):
                gp = fun_subset(fun, x, idx, x[idx] + d)[1]
                gm = fun_subset(fun, x, idx, x[idx] - d)[1]
            cols.append(np.einsum("bji,bj->bi", b, gp - gm) / (2.0 * h))
        hz = np.stack(cols, axis=2)
        hz = 0.5 * (hz + np.swapaxes(hz, 1, 2))
        if not np.all(np.isfinite(hz)):
            bad = ~np.all(np.isfinite(hz), axis=(1, 2))
            hz[bad] = np.eye(n)
        lam, u = np.linalg.eigh(hz)
        mag = np.abs(lam)
        keep = mag > 1e-7 * mag.max(axis=1, keepdims=True)
        inv = np.where(keep, 1.0 / np.where(keep, mag, 1.0), 0.0)
        pz = -np.einsum("bij,bj,bkj,bk->bi", u, inv, u, gz[idx])
        p = np.einsum("bij,bj->bi", b, pz)
        slope = np.einsum("bi,bi->b", pz, gz[idx])
        t = 1.0
        pending = np.ones(idx.size, dtype=bool)
        for _bt in range(opts.max_backtracks):
            j = np.flatnonzero(pending)
            with np.errstate(all="ignore"):
                ft, gt = fun_subset(fun, x, idx[j], x[idx[j]] + t * p[j])
            gzt = np.einsum("bji,bj->bi", b[j], gt)
            gnt = np.linalg.norm(gzt, axis=1)
            f0 = f[idx[j]]
            armijo = ft <= f0 + opts.c1 * t * slope[j]
            flat = (ft <= f0 + 8.0 * eps * np.abs(f0)) & (gnt <= 0.5 * gn[idx[j]])
            ok = np.isfinite(ft) & np.all(np.isfinite(gt), axis=1) & (armijo | flat)
            acc = idx[j[ok]]
            x[acc] += t * p[j[ok]]
            f[acc], g[acc], gz[acc], gn[acc] = ft[ok], gt[ok], gzt[ok], gnt[ok]
            steps[acc] += 1
            pending[j[ok]] = False
            if not pending.any():
                break
            t *= 0.5
        active[idx[pending]] = False
        active &= gn > 1e2 * eps * (1.0 + np.abs(f))
    return x, f, gn, steps


def fun_subset(fun, x_all, rows, trial):
    """Evaluate ``fun`` for a subset of problems.

    ``fun`` may expose ``fun.subset(rows, x)``; otherwise the full batch is
    evaluated with the trial points substituted.
    """
    if hasattr(fun, "subset"):
        return fun.subset(rows, trial)
    x = x_all.copy()
    x[rows] = trial
    f, g = fun(x)
    return f[rows], g[rows]


class _Objective:
    """Packed-coordinate augmented cost over a batch of bins."""

    def __init__(self, phi_x, phi_v, q_l, q_r, alpha, kinds):
        self.phi_x, self.phi_v = phi_x, phi_v
        self.q_l, self.q_r = q_l, q_r
        self.alpha = alpha
        self.kinds = kinds
        nb = phi_x.shape[0]
        ql = np.broadcast_to(q_l, (nb, len(q_l)))
        qr = np.broadcast_to(q_r, (nb, len(q_r)))
        self.targets = costs.input_measures(kinds, ql, qr, phi_v) if kinds else []

    def subset(self, rows, x):
        w_l, w_r = costs.unpack(x)
        j, g_l, g_r = costs.cost_and_grad(
            w_l, w_r, self.phi_x[rows], self.phi_v[rows], self.q_l, self.q_r,
            [self.alpha[rows]] * len(self.kinds), self.kinds,
            targets=[t[rows] for t in self.targets])
        return j, costs.pack(g_l, g_r)

    def __call__(self, x):
        return self.subset(np.arange(x.shape[0]), x)

    def parts(self, x):
        w_l, w_r = costs.unpack(x)
        return costs.cost_and_grad(
            w_l, w_r, self.phi_x, self.phi_v, self.q_l, self.q_r,
            [self.alpha] * len(self.kinds), self.kinds, targets=self.targets, parts=True)


def _preconditioner(phi_x, phi_v):
    block = np.linalg.inv(2.0 * _realrep(_ridged(phi_x + phi_v)))
    nb, n2, _ = block.shape
    h0 = np.zeros((nb, 2 * n2, 2 * n2))
    h0[:, :n2, :n2] = block
    h0[:, n2:, n2:] = block
    return 0.5 * (h0 + np.swapaxes(h0, 1, 2))


def _whitening(phi_x, phi_v, rtol=1e-10):
    """Generalized eigenbasis of ``(phi_x, phi_v)`` for one bin.

    Returns ``(to_c, from_c, null)`` with ``c = to_c @ w`` the coordinates in
    which ``phi_v`` is the identity and ``phi_x`` is diagonal, and ``null``
    marking the directions ``phi_x`` does not reach.  None if ``phi_v`` is
    not positive definite.
    """
    try:
        chol = np.linalg.cholesky(phi_v)
    except np.linalg.LinAlgError:
        return None
    inv = sla.solve_triangular(chol, np.eye(len(phi_v)), lower=True)
    a = inv @ phi_x @ inv.conj().T
    lam, u = np.linalg.eigh(0.5 * (a + a.conj().T))
    top = max(lam[-1], 0.0)
    null = lam <= rtol * top if top > 0 else np.ones(len(lam), dtype=bool)
    return u.conj().T @ chol.conj().T, inv.conj().T @ u, null


def canonical_gauge(w_l, w_r, phi_x, phi_v, q_l, q_r, rtol=1e-8):
    """Pick a unique representative among equally good filter pairs.

    Every cost term sees the filters only through ``phi_v`` inner products
    and through ``phi_x``.  A ``phi_v``-unitary rotation of both filters that
    acts only on directions outside the range of ``phi_x`` therefore changes
    nothing, and a rank-deficient ``phi_x`` leaves a whole family of
    minimizers.  Within that block the pair is replaced by the square root of
    its Gram matrix, written in a basis built from the selection vectors, so
    the result depends on the costs' inputs alone.  Single bin, ``(M,)``
    filters.  Directions where ``phi_x`` is below ``rtol`` of its peak count
    as unreached; the cost then moves by at most that fraction.
    """
    basis = _whitening(phi_x, phi_v, rtol)
    if basis is None:
        return w_l, w_r
    to_c, from_c, null = basis
    n0 = int(null.sum())
    if n0 == 0:
        return w_l, w_r
    c = to_c @ np.stack([w_l, w_r], axis=1)
    ref = to_c @ np.stack([q_l, q_r], axis=1).astype(complex)
    blk = c[null]
    qb, rb = np.linalg.qr(np.concatenate([ref[null], np.eye(n0)], axis=1), mode="complete")
    d = np.diag(rb)[:n0]
    qb = qb * np.where(np.abs(d) > 0, np.exp(1j * np.angle(d)), 1.0)
    if n0 >= 2:
        lam, vec = np.linalg.eigh(blk.conj().T @ blk)
        canon = np.zeros_like(blk)
        canon[:2] = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.conj().T
    else:
        canon = qb.conj().T @ blk
        j = 0 if abs(canon[0, 0]) > 0 else 1
        canon = canon * np.exp(-1j * np.angle(canon[0, j]))
    c[null] = qb @ canon
    w = from_c @ c
    return w[:, 0], w[:, 1]


def _kick(w_l, w_r, phi_x, phi_v, q_l, q_r, size, rtol=1e-8):
    """Move ``(w_l, w_r)`` off the set with no component outside range(phi_x).

    Cost and gradient are even in that component, so a start with none of it
    keeps none in exact arithmetic; rounding alone would decide when (and
    whether) the solver leaves.  A small push along ``q`` makes that
    deterministic.
    """
    basis = _whitening(phi_x, phi_v, rtol)
    if basis is None:
        return w_l, w_r
    to_c, from_c, null = basis
    if not null.any():
        return w_l, w_r
    push = np.zeros((len(null), 2), dtype=complex)
    push[null] = (to_c @ np.stack([q_l, q_r], axis=1).astype(complex))[null]
    d = size * (from_c @ push)
    return w_l + d[:, 0], w_r + d[:, 1]


def solve_batch(phi_x, phi_v, q_l, q_r, alpha, kinds, opts: SolverOptions = SolverOptions(),
                init_filters=None, record=False, gauge=True):
    """Minimise the augmented cost for every bin of ``(B, M, M)`` stacks.

    ``alpha`` is one weight per bin, shared by all penalty kinds.  Each bin is
    solved on its cost divided by ``tr(phi_x + phi_v)``; the minimiser is the
    same and the stopping tests no longer depend on the overall signal level.
    With ``gauge`` the filters are mapped to :func:`canonical_gauge`.
    Returns ``(w_l, w_r, Diagnostics)``.
    """
    phi_x = np.asarray(phi_x, dtype=complex)
    phi_v = np.asarray(phi_v, dtype=complex)
    q_l = np.asarray(q_l, dtype=complex)
    q_r = np.asarray(q_r, dtype=complex)
    nb, m, _ = phi_x.shape
    finite = np.all(np.isfinite(phi_x), axis=(1, 2)) & np.all(np.isfinite(phi_v), axis=(1, 2))
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise SolverError("non-finite coherence matrix", bin_index=bad)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (nb,)).copy()
    if np.any(alpha < 0):
        raise ValueError("penalty weights must be non-negative")
    kinds = [PenaltyKind.parse(k) for k in kinds]
    if opts.init == "closed-form-MWF":
        w_l, w_r = solve_mwf_closed_form(phi_x, phi_v, q_l, q_r)
    elif opts.init == "Q":
        w_l, w_r = np.tile(q_l, (nb, 1)), np.tile(q_r, (nb, 1))
    elif opts.init == "zeros":
        w_l = w_r = np.zeros((nb, m), dtype=complex)
    else:
        if init_filters is None:
            raise ValueError("init='given' needs init_filters")
        w_l, w_r = init_filters
    if kinds and opts.init == "closed-form-MWF" and opts.null_kick > 0:
        w_l, w_r = w_l.copy(), w_r.copy()
        for b in range(nb):
            w_l[b], w_r[b] = _kick(w_l[b], w_r[b], phi_x[b], phi_v[b], q_l, q_r,
                                   opts.null_kick, opts.null_rtol)
    scale = np.real(np.einsum("kmm->k", phi_x + phi_v))
    scale = np.where(scale > 0, scale, 1.0)
    sx = phi_x / scale[:, None, None]
    sv = phi_v / scale[:, None, None]
    obj = _Objective(sx, sv, q_l, q_r, alpha / scale, kinds)
    h0 = _preconditioner(sx, sv) if opts.precondition else None
    x, f, iters, status, trace = bfgs(obj, costs.pack(w_l, w_r), h0, opts, record=record)
    if kinds and opts.refine_iters > 0:
        x, f, gn, _ = newton_refine(obj, x, h0, opts)
        status[gn <= opts.grad_tol * (1.0 + np.abs(f))] = "converged"
    w_l, w_r = costs.unpack(x)
    if gauge and kinds:
        for b in range(nb):
            w_l[b], w_r[b] = canonical_gauge(w_l[b], w_r[b], phi_x[b], phi_v[b], q_l, q_r,
                                              opts.null_rtol)
    j, _, _, j_m, pens = obj.parts(costs.pack(w_l, w_r))
    if trace is not None:
        trace = [list(np.asarray(t) * sc) for t, sc in zip(trace, scale)]
    diag = Diagnostics(j_total=j * scale, j_mwf=j_m * scale,
                       penalties={k.value: p for k, p in zip(kinds, pens)},
                       iterations=iters, status=status, trace=trace)
    return w_l, w_r, diag


def solve_augmented(phi_x, phi_v, q_l, q_r, method: MethodSpec, g_sq,
                    opts: SolverOptions = SolverOptions(), init_filters=None):
    """Solve one bin (``(M, M)`` inputs) or a batch (``(B, M, M)``).

    ``g_sq`` is the noise power used by a dynamic schedule.
    """
    phi_x = np.asarray(phi_x, dtype=complex)
    single = phi_x.ndim == 2
    if single:
        phi_x = phi_x[None]
        phi_v = np.asarray(phi_v)[None]
        g_sq = np.atleast_1d(g_sq)
        if init_filters is not None:
            init_filters = tuple(np.asarray(w)[None] for w in init_filters)
    alpha = method.alpha(np.broadcast_to(np.asarray(g_sq, dtype=float), phi_x.shape[:1]))
    w_l, w_r, diag = solve_batch(phi_x, phi_v, q_l, q_r, alpha, method.kinds, opts,
                                 init_filters)
    if single:
        return w_l[0], w_r[0], diag[0]
    return w_l, w_r, diag


def solve_scene(stats, method: MethodSpec, opts: SolverOptions = SolverOptions()):
    """Filter bank for all bins of a :class:`~binaural_mwf.stats.SceneStats`.

    Bins without noise power are passed through (``W = Q``).  Returns
    ``(FilterBank, Diagnostics)``.
    """
    phi_x, phi_v = stats.phi_x.matrices, stats.phi_v.matrices
    g_sq = stats.power.per_bin()
    nb = phi_x.shape[0]
    passthru = ~(stats.phi_v.trace() > 0)
    live = np.flatnonzero(~passthru)
    w_l = np.tile(np.asarray(stats.q_l, dtype=complex), (nb, 1))
    w_r = np.tile(np.asarray(stats.q_r, dtype=complex), (nb, 1))
    j_tot = np.zeros(nb)
    j_m = np.zeros(nb)
    pens = {k.value: np.zeros(nb) for k in method.kinds}
    iters = np.zeros(nb, dtype=int)
    status = np.full(nb, "passthrough", dtype=object)
    if live.size:
        alpha = method.alpha(g_sq)[live]
        try:
            wl, wr, d = solve_batch(phi_x[live], phi_v[live], stats.q_l, stats.q_r,
                                    alpha, method.kinds, opts)
        except SolverError as exc:
            b = None if exc.bin_index is None else int(live[exc.bin_index])
            raise SolverError(f"bin {b}: {exc}", bin_index=b, iterate=exc.iterate) from exc
        except ArithmeticError as exc:
            raise SolverError(str(exc)) from exc
        w_l[live], w_r[live] = wl, wr
        j_tot[live], j_m[live] = d.j_total, d.j_mwf
        for k, v in d.penalties.items():
            pens[k][live] = v
        iters[live], status[live] = d.iterations, d.status
    return FilterBank(w_l, w_r), Diagnostics(j_tot, j_m, pens, iters, status)
