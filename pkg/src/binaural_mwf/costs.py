"""MWF cost, binaural-cue penalties and their gradients.

Every function broadcasts over leading batch dimensions: filters are
``(..., M)`` and matrices ``(..., M, M)``.  Gradients are returned as the
complex vector ``2 dJ/d(conj w)``, whose real and imaginary parts are the
partial derivatives with respect to ``Re w`` and ``Im w``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMeasureError, DimensionError

HERMITIAN_TOL = 1e-10


class PenaltyKind(enum.Enum):
    ITF = "ITF"
    ILD = "ILD"
    ITD = "ITD"
    IC = "IC"

    @classmethod
    def parse(cls, value) -> "PenaltyKind":
        return value if isinstance(value, cls) else cls(str(value).upper())


@dataclass
class FilterBank:
    """Left/right filters for every bin, each ``(bins, M)`` complex."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=complex)
        self.right = np.asarray(self.right, dtype=complex)
        if self.left.shape != self.right.shape or self.left.ndim != 2:
            raise DimensionError("left and right filters must both be (bins, M)")
        if not (np.all(np.isfinite(self.left)) and np.all(np.isfinite(self.right))):
            raise ValueError("filter coefficients must be finite")

    @property
    def num_bins(self) -> int:
        return self.left.shape[0]

    @property
    def num_mics(self) -> int:
        return self.left.shape[1]

    @classmethod
    def selection(cls, q_l, q_r, num_bins: int) -> "FilterBank":
        """Pass-through bank ``W = Q`` at every bin."""
        return cls(np.tile(np.asarray(q_l, dtype=complex), (num_bins, 1)),
                   np.tile(np.asarray(q_r, dtype=complex), (num_bins, 1)))

    def scaled(self, c) -> "FilterBank":
        return FilterBank(self.left * c, self.right * c)

    def to_csv(self, path) -> None:
        rows = []
        for side, w in enumerate((self.left, self.right)):
            k, m = np.indices(w.shape)
            rows.append(np.column_stack([k.ravel(), np.full(w.size, side), m.ravel(),
                                         w.real.ravel(), w.imag.ravel()]))
        np.savetxt(path, np.vstack(rows), delimiter=",", header="bin,side,mic,re,im",
                   comments="", fmt=["%d", "%d", "%d", "%.17g", "%.17g"])

    @classmethod
    def from_csv(cls, path) -> "FilterBank":
        t = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        k, side, m = (t[:, i].astype(int) for i in range(3))
        w = np.zeros((2, k.max() + 1, m.max() + 1), dtype=complex)
        w[side, k, m] = t[:, 3] + 1j * t[:, 4]
        return cls(w[0], w[1])


@dataclass
class WeightSchedule:
    """Per-bin trade-off constants and how they turn into penalty weights."""

    beta: np.ndarray
    dynamic: bool = True

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if np.any(self.beta < 0):
            raise ValueError("beta must be non-negative")

    def alpha(self, g_sq) -> np.ndarray:
        if self.dynamic:
            return self.beta * np.asarray(g_sq, dtype=float)
        return np.broadcast_to(self.beta, np.shape(g_sq)).astype(float)


def quad(a, phi, b):
    """``a^H phi b`` over the trailing axes."""
    return np.einsum("...i,...ij,...j->...", np.conj(a), phi, b)


def wrap_angle(x):
    """Wrap to ``(-pi, pi]``; ``-pi`` maps to ``+pi``."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)


def check_hermitian(phi, name="matrix") -> None:
    phi = np.asarray(phi)
    scale = np.max(np.abs(phi), initial=0.0)
    err = np.max(np.abs(phi - np.conj(np.swapaxes(phi, -1, -2))), initial=0.0)
    if err > HERMITIAN_TOL * max(scale, 1e-300):
        raise ValueError(f"{name} is not Hermitian (max asymmetry {err:.3g})")


def j_mwf(w_l, w_r, phi_x, phi_v, q_l, q_r, check=True):
    """Speech-distortion plus residual-noise cost of a filter pair."""
    if check:
        check_hermitian(phi_x, "phi_x")
        check_hermitian(phi_v, "phi_v")
    e_l = np.asarray(q_l) - w_l
    e_r = np.asarray(q_r) - w_r
    j = (quad(e_l, phi_x, e_l) + quad(w_l, phi_v, w_l)
         + quad(e_r, phi_x, e_r) + quad(w_r, phi_v, w_r))
    return np.real(j)


def grad_j_mwf(w_l, w_r, phi_x, phi_v, q_l, q_r):
    phi_y = phi_x + phi_v
    g_l = 2.0 * (np.einsum("...ij,...j->...i", phi_y, w_l)
                 - np.einsum("...ij,...j->...i", phi_x, np.broadcast_to(q_l, np.shape(w_l))))
    g_r = 2.0 * (np.einsum("...ij,...j->...i", phi_y, w_r)
                 - np.einsum("...ij,...j->...i", phi_x, np.broadcast_to(q_r, np.shape(w_r))))
    return g_l, g_r


class _Forms:
    """Quadratic and cross forms of a filter pair against one matrix."""

    def __init__(self, a_l, a_r, phi):
        a_l = np.asarray(a_l, dtype=complex)
        a_r = np.asarray(a_r, dtype=complex)
        self.phi_r = np.einsum("...ij,...j->...i", phi, a_r)
        self.phi_l = np.einsum("...ij,...j->...i", phi, a_l)
        self.cross = np.einsum("...i,...i->...", a_l.conj(), self.phi_r)
        self.p_l = np.real(np.einsum("...i,...i->...", a_l.conj(), self.phi_l))
        self.p_r = np.real(np.einsum("...i,...i->...", a_r.conj(), self.phi_r))
        self.scale = np.real(np.einsum("...ii->...", phi)) * np.maximum(
            np.sum(np.abs(a_l) ** 2, axis=-1), np.sum(np.abs(a_r) ** 2, axis=-1))


def _degenerate(p, scale):
    return p <= 1e-14 * scale


def _measure(kind: PenaltyKind, f: _Forms, strict=True):
    bad = _degenerate(f.p_r, f.scale)
    if kind is PenaltyKind.IC:
        bad = bad | _degenerate(f.p_l, f.scale)
    if kind is PenaltyKind.ITD:
        bad = bad | (np.abs(f.cross) <= 1e-14 * f.scale)
    if strict and np.any(bad):
        raise DegenerateMeasureError(f"{kind.value} measure has a vanishing denominator")
    p_r = np.where(bad, 1.0, f.p_r)
    if kind is PenaltyKind.ITF:
        return f.cross / p_r
    if kind is PenaltyKind.ILD:
        return f.p_l / p_r
    if kind is PenaltyKind.ITD:
        return np.angle(f.cross)
    p_l = np.where(bad, 1.0, f.p_l)
    return f.cross / np.sqrt(p_l * p_r)


def binaural_measure(kind, a_l, a_r, phi_v):
    """Interaural measure of the pair ``(a_l, a_r)`` evaluated on ``phi_v``.

    ITF and IC are complex, ILD is a linear power ratio, ITD a phase in
    ``(-pi, pi]``.
    """
    kind = PenaltyKind.parse(kind)
    value = _measure(kind, _Forms(a_l, a_r, phi_v))
    if kind is PenaltyKind.ITD:
        return wrap_angle(value)
    return value


def _penalty_diff(kind, out, inp):
    if kind is PenaltyKind.ITD:
        return wrap_angle(out - inp)
    return out - inp


def j_penalty(kind, w_l, w_r, q_l, q_r, phi_v):
    """Squared deviation of the output measure from the input measure."""
    kind = PenaltyKind.parse(kind)
    q_l = np.broadcast_to(np.asarray(q_l, dtype=complex), np.shape(w_l))
    q_r = np.broadcast_to(np.asarray(q_r, dtype=complex), np.shape(w_r))
    d = _penalty_diff(kind, _measure(kind, _Forms(w_l, w_r, phi_v)),
                      _measure(kind, _Forms(q_l, q_r, phi_v)))
    return np.abs(d) ** 2


def _penalty_grad(kind, f: _Forms, target):
    """``(J, 2 dJ/d conj(w_l), 2 dJ/d conj(w_r))`` for one penalty."""
    a, p_l, p_r = f.cross, f.p_l, f.p_r
    A, B = f.phi_r, f.phi_l
    ex = lambda s: np.asarray(s)[..., None]  # noqa: E731
    if kind is PenaltyKind.ITF:
        d = a / p_r - target
        g_l = np.conj(d)[..., None] * A / ex(p_r)
        g_r = (np.conj(d)[..., None] * (-ex(a) * A / ex(p_r ** 2))
               + ex(d) * (B / ex(p_r) - ex(np.conj(a)) * A / ex(p_r ** 2)))
        j = np.abs(d) ** 2
    elif kind is PenaltyKind.ILD:
        d = p_l / p_r - target
        g_l = ex(2.0 * d / p_r) * B
        g_r = ex(-2.0 * d * p_l / p_r ** 2) * A
        j = d ** 2
    elif kind is PenaltyKind.ITD:
        d = wrap_angle(np.angle(a) - target)
        g_l = ex(2.0 * d) * A / ex(2j * a)
        g_r = ex(2.0 * d) * (-B / ex(2j * np.conj(a)))
        j = d ** 2
    else:
        s = np.sqrt(p_l * p_r)
        gam = a / s
        d = gam - target
        dg_l = A / ex(s) - ex(gam / (2.0 * p_l)) * B
        dgc_l = -ex(np.conj(gam) / (2.0 * p_l)) * B
        dg_r = -ex(gam / (2.0 * p_r)) * A
        dgc_r = B / ex(s) - ex(np.conj(gam) / (2.0 * p_r)) * A
        g_l = ex(np.conj(d)) * dg_l + ex(d) * dgc_l
        g_r = ex(np.conj(d)) * dg_r + ex(d) * dgc_r
        j = np.abs(d) ** 2
    return np.real(j), 2.0 * g_l, 2.0 * g_r


def _as_kinds(kinds):
    return [PenaltyKind.parse(k) for k in kinds]


def _alpha_list(alpha, n):
    if np.ndim(alpha) == 0 or (isinstance(alpha, np.ndarray) and n == 1):
        return [alpha] * n
    alpha = list(alpha)
    if len(alpha) != n:
        raise DimensionError(f"{len(alpha)} weights for {n} penalty terms")
    return alpha


def input_measures(kinds, q_l, q_r, phi_v):
    """Input-side measures per penalty kind (targets for the output side)."""
    out = []
    for kind in _as_kinds(kinds):
        shape = np.shape(phi_v)[:-1]
        ql = np.broadcast_to(np.asarray(q_l, dtype=complex), shape)
        qr = np.broadcast_to(np.asarray(q_r, dtype=complex), shape)
        out.append(_measure(kind, _Forms(ql, qr, phi_v)))
    return out


def j_total(w_l, w_r, phi_x, phi_v, q_l, q_r, alpha=(), kinds=()):
    """Augmented cost ``J_MWF + sum_i alpha_i J_i``."""
    kinds = _as_kinds(kinds)
    alphas = _alpha_list(alpha, len(kinds))
    if any(np.any(np.asarray(a) < 0) for a in alphas):
        raise ValueError("penalty weights must be non-negative")
    j = j_mwf(w_l, w_r, phi_x, phi_v, q_l, q_r)
    for kind, a in zip(kinds, alphas):
        j = j + np.asarray(a) * j_penalty(kind, w_l, w_r, q_l, q_r, phi_v)
    return j


def cost_and_grad(w_l, w_r, phi_x, phi_v, q_l, q_r, alpha, kinds, targets=None,
                  parts=False):
    """Augmented cost and its complex gradients, batched, without input checks.

    ``targets`` are the input-side measures (see :func:`input_measures`); pass
    them in when evaluating repeatedly.  With ``parts=True`` also returns the
    MWF cost and each penalty value.
    """
    kinds = _as_kinds(kinds)
    alphas = _alpha_list(alpha, len(kinds))
    if targets is None:
        targets = input_measures(kinds, q_l, q_r, phi_v)
    j_m = j_mwf(w_l, w_r, phi_x, phi_v, q_l, q_r, check=False)
    g_l, g_r = grad_j_mwf(w_l, w_r, phi_x, phi_v, q_l, q_r)
    j = j_m
    pens = []
    if kinds:
        f = _Forms(w_l, w_r, phi_v)
        for kind, a, t in zip(kinds, alphas, targets):
            jp, gl, gr = _penalty_grad(kind, f, t)
            a = np.asarray(a, dtype=float)
            j = j + a * jp
            g_l = g_l + a[..., None] * gl
            g_r = g_r + a[..., None] * gr
            pens.append(jp)
    if parts:
        return j, g_l, g_r, j_m, pens
    return j, g_l, g_r


def pack(w_l, w_r) -> np.ndarray:
    """Stack ``[Re w_l, Im w_l, Re w_r, Im w_r]`` along the last axis."""
    return np.concatenate([np.real(w_l), np.imag(w_l), np.real(w_r), np.imag(w_r)], axis=-1)


def unpack(x):
    m = x.shape[-1] // 4
    return x[..., :m] + 1j * x[..., m:2 * m], x[..., 2 * m:3 * m] + 1j * x[..., 3 * m:]


def grad_j_total(w_l, w_r, phi_x, phi_v, q_l, q_r, alpha=(), kinds=()):
    """Real gradient of :func:`j_total` over the ``4M`` packed coordinates."""
    _, g_l, g_r = cost_and_grad(w_l, w_r, phi_x, phi_v, q_l, q_r, alpha, kinds)
    return pack(g_l, g_r)
