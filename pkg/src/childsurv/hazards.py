"""Parametric hazard families and calendar-period cumulative hazards.

Each family exposes its hazard, cumulative hazard from age zero and the
log-hazard, together with analytic gradients with respect to the natural
parameters.  Parameters are also mapped to an unconstrained scale (log,
identity or logit per coordinate) for optimisation.

A child born at ``b`` is exposed to period ``p`` over the age window
``[max(a_p, 0), min(x, a_p + l_p)]`` where ``a_p = y_p - b``.  The cumulative
hazard to age ``x`` sums the family cumulative hazard of each period over its
window.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .data import HORIZON, PeriodGrid
from .special import gammainc_and_da

__all__ = [
    "HazardFamily",
    "Exponential",
    "PiecewiseExponential",
    "Weibull",
    "GeneralizedGamma",
    "LogNormal",
    "Gompertz",
    "ETSP",
    "FAMILIES",
    "get_family",
    "ParamVector",
    "hazard",
    "cumulative_hazard",
    "survival",
    "period_windows",
    "period_cumulative_hazard",
    "survival_curve",
    "synthetic_survival",
    "rate_summary",
]

_LOG2PI = np.log(2.0 * np.pi)


def _expit(x):
    return special.expit(x)


class HazardFamily:
    """Base class for a parametric hazard family.

    Subclasses define ``param_names``, ``transforms`` and the two kernels
    ``_cumhaz`` and ``_loghaz``.  Kernels receive the natural parameters as a
    tuple of arrays broadcastable against ``u`` and return the value together
    with a list of partial derivatives (or ``None`` when ``grad`` is false).
    """

    name = "base"
    param_names: tuple = ()
    transforms: tuple = ()
    bounds: tuple = ()

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other) and repr(self) == repr(other)

    def __hash__(self):
        return hash(repr(self))

    # parameter scales -------------------------------------------------
    def to_natural(self, eta):
        eta = np.asarray(eta, dtype=float)
        out = np.empty_like(eta)
        for j, tr in enumerate(self.transforms):
            e = eta[..., j]
            if tr == "log":
                out[..., j] = np.exp(e)
            elif tr == "logit":
                out[..., j] = _expit(e)
            else:
                out[..., j] = e
        return out

    def to_unconstrained(self, theta):
        theta = np.asarray(theta, dtype=float)
        self.check_natural(theta)
        out = np.empty_like(theta)
        for j, tr in enumerate(self.transforms):
            t = theta[..., j]
            if tr == "log":
                out[..., j] = np.log(t)
            elif tr == "logit":
                out[..., j] = special.logit(t)
            else:
                out[..., j] = t
        return out

    def dnatural(self, eta):
        """Elementwise derivative of natural parameters with respect to ``eta``."""
        eta = np.asarray(eta, dtype=float)
        theta = self.to_natural(eta)
        out = np.ones_like(eta)
        for j, tr in enumerate(self.transforms):
            if tr == "log":
                out[..., j] = theta[..., j]
            elif tr == "logit":
                out[..., j] = theta[..., j] * (1.0 - theta[..., j])
        return out

    def check_natural(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.n_params:
            raise ValueError(
                f"{self.name} expects {self.n_params} parameters, got {theta.shape[-1]}"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError(f"{self.name} parameters must be finite")
        for j, tr in enumerate(self.transforms):
            t = theta[..., j]
            if tr == "log" and np.any(t <= 0):
                raise ValueError(f"{self.name} parameter {self.param_names[j]} must be positive")
            if tr == "logit" and np.any((t <= 0) | (t >= 1)):
                raise ValueError(f"{self.name} parameter {self.param_names[j]} must lie in (0, 1)")

    def init_from_rate(self, rate: float) -> np.ndarray:
        """Natural parameters roughly matching a constant hazard ``rate``."""
        raise NotImplementedError

    # kernels -----------------------------------------------------------
    def _cumhaz(self, th, u, grad):
        raise NotImplementedError

    def _loghaz(self, th, u, grad):
        raise NotImplementedError

    @staticmethod
    def _cols(theta):
        theta = np.asarray(theta, dtype=float)
        return tuple(theta[..., j] for j in range(theta.shape[-1]))

    def cumhaz0(self, theta, u, grad=False):
        """Cumulative hazard from age 0 to ``u`` (and gradient if requested).

        ``theta`` has trailing dimension ``n_params`` and broadcasts against ``u``.
        The gradient is returned with a trailing parameter axis.
        """
        u = np.asarray(u, dtype=float)
        th = self._cols(theta)
        val, g = self._cumhaz(th, u, grad)
        if not grad:
            return val
        shape = np.broadcast_shapes(val.shape, *(t.shape for t in th))
        return val, np.stack([np.broadcast_to(gi, shape) for gi in g], axis=-1)

    def loghaz(self, theta, u, grad=False):
        u = np.asarray(u, dtype=float)
        th = self._cols(theta)
        val, g = self._loghaz(th, u, grad)
        if not grad:
            return val
        shape = np.broadcast_shapes(val.shape, *(t.shape for t in th))
        return val, np.stack([np.broadcast_to(gi, shape) for gi in g], axis=-1)


class Exponential(HazardFamily):
    """Constant hazard ``beta``."""

    name = "exponential"
    param_names = ("beta",)
    transforms = ("log",)
    bounds = ((-30.0, 10.0),)

    def init_from_rate(self, rate):
        return np.array([rate])

    def _cumhaz(self, th, u, grad):
        (beta,) = th
        val = beta * u
        return val, ([u] if grad else None)

    def _loghaz(self, th, u, grad):
        (beta,) = th
        val = np.log(beta) + 0.0 * u
        return val, ([1.0 / beta + 0.0 * u] if grad else None)


class PiecewiseExponential(HazardFamily):
    """Piecewise-constant hazard with rates ``beta_j`` between age cutpoints.

    Parameters
    ----------
    cutpoints : sequence of float, default (1, 12)
        Interior age cutpoints in months.  With ``m`` cutpoints there are
        ``m + 1`` pieces, the last one open ended.
    """

    name = "pwexp"
    transforms = ()

    def __init__(self, cutpoints: Sequence[float] = (1.0, 12.0)):
        cut = tuple(float(c) for c in cutpoints)
        if any(c <= 0 for c in cut) or any(b <= a for a, b in zip(cut[:-1], cut[1:])):
            raise ValueError("cutpoints must be positive and strictly increasing")
        self.cutpoints = cut
        k = len(cut) + 1
        self.param_names = tuple(f"beta{j + 1}" for j in range(k))
        self.transforms = ("log",) * k
        self.bounds = ((-30.0, 10.0),) * k
        self._edges = np.concatenate([[0.0], cut, [np.inf]])

    def __repr__(self):
        return f"PiecewiseExponential(cutpoints={self.cutpoints})"

    def init_from_rate(self, rate):
        return np.full(self.n_params, rate)

    def _overlaps(self, u):
        lo = self._edges[:-1]
        hi = self._edges[1:]
        return [np.clip(u - lo[j], 0.0, hi[j] - lo[j]) for j in range(self.n_params)]

    def _cumhaz(self, th, u, grad):
        ov = self._overlaps(u)
        val = sum(b * o for b, o in zip(th, ov))
        return val, (ov if grad else None)

    def _loghaz(self, th, u, grad):
        piece = np.searchsorted(self._edges[1:-1], u, side="right")
        val = np.zeros(np.broadcast_shapes(u.shape, *(t.shape for t in th)))
        g = []
        for j, b in enumerate(th):
            ind = piece == j
            val = val + np.where(ind, np.log(b), 0.0)
            g.append(np.where(ind, 1.0 / b, 0.0))
        return val, (g if grad else None)


class Weibull(HazardFamily):
    """Weibull hazard with cumulative hazard ``(beta u)^k``."""

    name = "weibull"
    param_names = ("beta", "k")
    transforms = ("log", "log")
    bounds = ((-30.0, 10.0), (-6.0, 4.0))

    def init_from_rate(self, rate):
        return np.array([rate, 1.0])

    def _cumhaz(self, th, u, grad):
        beta, k = th
        bu = beta * u
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(bu > 0, bu ** k, 0.0)
            if not grad:
                return val, None
            lbu = np.where(bu > 0, np.log(np.where(bu > 0, bu, 1.0)), 0.0)
        return val, [k * val / beta, val * lbu]

    def _loghaz(self, th, u, grad):
        beta, k = th
        with np.errstate(divide="ignore"):
            lu = np.log(u)
        val = np.log(k) + k * np.log(beta) + (k - 1.0) * lu
        if not grad:
            return val, None
        return val, [k / beta + 0.0 * u, 1.0 / k + np.log(beta) + lu]


class LogNormal(HazardFamily):
    """Log-normal survival with location ``mu`` and scale ``sigma`` on log age."""

    name = "lognormal"
    param_names = ("mu", "sigma")
    transforms = ("identity", "log")
    bounds = ((-50.0, 80.0), (-6.0, 4.0))

    def init_from_rate(self, rate):
        return np.array([np.log(np.log(2.0) / rate), 2.0])

    @staticmethod
    def _z(th, u):
        mu, sigma = th
        with np.errstate(divide="ignore"):
            return (np.log(u) - mu) / sigma

    def _cumhaz(self, th, u, grad):
        mu, sigma = th
        z = self._z(th, u)
        val = -special.log_ndtr(-z)
        if not grad:
            return val, None
        with np.errstate(invalid="ignore", over="ignore"):
            lam = np.exp(-0.5 * z * z - 0.5 * _LOG2PI - special.log_ndtr(-z))
            lam = np.where(np.isfinite(z), lam, 0.0)
            zz = np.where(np.isfinite(z), z, 0.0)
        return val, [-lam / sigma, -lam * zz / sigma]

    def _loghaz(self, th, u, grad):
        mu, sigma = th
        z = self._z(th, u)
        with np.errstate(divide="ignore"):
            logf = -np.log(u) - np.log(sigma) - 0.5 * _LOG2PI - 0.5 * z * z
        val = logf - special.log_ndtr(-z)
        if not grad:
            return val, None
        lam = np.exp(-0.5 * z * z - 0.5 * _LOG2PI - special.log_ndtr(-z))
        return val, [(z - lam) / sigma, (-1.0 + z * z - lam * z) / sigma]


class Gompertz(HazardFamily):
    """Gompertz hazard ``k beta exp(beta u)``; cumulative ``k (exp(beta u) - 1)``."""

    name = "gompertz"
    param_names = ("beta", "k")
    transforms = ("log", "log")
    # A small positive floor keeps the shape identifiable when the data favour
    # a decreasing hazard, which the family cannot represent.
    bounds = ((np.log(1e-5), 3.0), (-30.0, 15.0))

    def init_from_rate(self, rate):
        beta = 0.01
        return np.array([beta, rate / beta])

    def _cumhaz(self, th, u, grad):
        beta, k = th
        em = np.expm1(beta * u)
        val = k * em
        if not grad:
            return val, None
        return val, [k * u * np.exp(beta * u), em]

    def _loghaz(self, th, u, grad):
        beta, k = th
        val = np.log(k) + np.log(beta) + beta * u
        if not grad:
            return val, None
        return val, [1.0 / beta + u, 1.0 / k + 0.0 * u]


def _log_a_minus_digamma(a):
    """``log(a) - digamma(a)`` with an asymptotic series for large ``a``."""
    a = np.asarray(a, dtype=float)
    big = a > 20.0
    safe_big = np.where(big, a, 30.0)
    inv = 1.0 / safe_big
    inv2 = inv * inv
    series = inv * (0.5 + inv * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0)))
    safe_small = np.where(big, 1.0, a)
    direct = np.log(safe_small) - special.digamma(safe_small)
    return np.where(big, series, direct)


def _stirling_remainder(a):
    """``a log a - a - lgamma(a)`` computed without cancellation for large ``a``."""
    a = np.asarray(a, dtype=float)
    big = a > 20.0
    safe_big = np.where(big, a, 30.0)
    inv = 1.0 / safe_big
    inv2 = inv * inv
    series = -0.5 * np.log(2.0 * np.pi * inv) - inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
    safe_small = np.where(big, 1.0, a)
    direct = safe_small * np.log(safe_small) - safe_small - special.gammaln(safe_small)
    return np.where(big, series, direct)


class GeneralizedGamma(HazardFamily):
    """Generalized gamma in the location-scale-shape parameterisation.

    With ``a = Q^-2``, ``w = (log u - mu) / sigma`` and ``x = a exp(Q w)``, the
    survival function is the upper regularized incomplete gamma ``Q(a, x)`` for
    ``Q > 0`` and the lower one ``P(a, x)`` for ``Q < 0``.  The closed form
    loses precision as ``Q`` approaches zero, so for ``|Q| < q_small`` values
    and gradients are interpolated quadratically in ``Q`` through the closed
    form at ``+-q_small`` and the log-normal limit at ``Q = 0``.
    """

    name = "gengamma"
    param_names = ("mu", "sigma", "Q")
    transforms = ("identity", "log", "identity")
    bounds = ((-50.0, 80.0), (-6.0, 4.0), (-10.0, 10.0))
    q_small = 5e-3

    def init_from_rate(self, rate):
        # Q = 1 and sigma = 1 reproduce the exponential distribution exactly.
        return np.array([-np.log(rate), 1.0, 1.0])

    @staticmethod
    def _direct_cumhaz(mu, s, q, u, grad):
        a = q ** -2.0
        w = (np.log(u) - mu) / s
        x = a * np.exp(q * w)
        sgn = np.sign(q)
        p_lower = special.gammainc(a, x)
        p_upper = special.gammaincc(a, x)
        F = np.where(sgn > 0, p_lower, p_upper)
        S = np.where(sgn > 0, p_upper, p_lower)
        with np.errstate(divide="ignore"):
            val = np.where(F < 0.5, -np.log1p(-F), -np.log(S))
        if not grad:
            return val, None
        _, pa = gammainc_and_da(a, x)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            px = np.exp((a - 1.0) * np.log(x) - x - special.gammaln(a))
            px = np.where(x > 0, px, 0.0)
            inv_s = np.where(S > 0, 1.0 / S, 0.0)
        da = -2.0 * q ** -3.0
        return val, [
            sgn * px * (-x * q / s) * inv_s,
            sgn * px * (-x * q * w / s) * inv_s,
            sgn * (pa * da + px * x * (w - 2.0 / q)) * inv_s,
        ]

    @classmethod
    def _direct_loghaz(cls, mu, s, q, u, grad):
        a = q ** -2.0
        with np.errstate(divide="ignore"):
            w = (np.log(u) - mu) / s
        qw = q * w
        em = np.expm1(qw)
        mdiff = em - qw
        logf = -np.log(s * u) + np.log(np.abs(q)) + _stirling_remainder(a) - a * mdiff
        H, gH = cls._direct_cumhaz(mu, s, q, u, grad)
        val = logf + H
        if not grad:
            return val, None
        da = -2.0 * q ** -3.0
        return val, [
            a * q * em / s + gH[0],
            -1.0 / s + a * q * em * w / s + gH[1],
            1.0 / q + _log_a_minus_digamma(a) * da - da * mdiff - a * w * em + gH[2],
        ]

    def _evaluate(self, th, u, grad, direct, limit):
        mu, sigma, q = th
        shape = np.broadcast_shapes(u.shape, mu.shape, sigma.shape, q.shape)
        mu, sigma, q, u = (np.broadcast_to(v, shape).astype(float) for v in (mu, sigma, q, u))
        val = np.zeros(shape)
        g = [np.zeros(shape) for _ in range(3)] if grad else None
        live = u > 0 if direct is self._direct_cumhaz else np.ones(shape, dtype=bool)
        near = live & (np.abs(q) < self.q_small)
        far = live & ~near
        if far.any():
            v, gd = direct(mu[far], sigma[far], q[far], u[far], grad)
            val[far] = v
            if grad:
                for j in range(3):
                    g[j][far] = gd[j]
        if near.any():
            m_, s_, q_, u_ = mu[near], sigma[near], q[near], u[near]
            h = self.q_small
            vp, gp = direct(m_, s_, np.full_like(q_, h), u_, grad)
            vm, gm = direct(m_, s_, np.full_like(q_, -h), u_, grad)
            v0, g0 = limit((m_, s_), u_, grad)
            c1 = (vp - vm) / (2.0 * h)
            c2 = (vp - 2.0 * v0 + vm) / (2.0 * h * h)
            val[near] = v0 + q_ * c1 + q_ * q_ * c2
            if grad:
                for j in range(2):
                    d1 = (gp[j] - gm[j]) / (2.0 * h)
                    d2 = (gp[j] - 2.0 * g0[j] + gm[j]) / (2.0 * h * h)
                    g[j][near] = g0[j] + q_ * d1 + q_ * q_ * d2
                g[2][near] = c1 + 2.0 * q_ * c2
        return val, g

    def _cumhaz(self, th, u, grad):
        return self._evaluate(th, u, grad, self._direct_cumhaz, LogNormal()._cumhaz)

    def _loghaz(self, th, u, grad):
        return self._evaluate(th, u, grad, self._direct_loghaz, LogNormal()._loghaz)


class ETSP(HazardFamily):
    """Exponentially truncated shifted power hazard ``a u^{-p} exp(-b u)``.

    The shift is fixed at zero, so ``u`` is age itself.  The cumulative hazard
    is ``a b^{p-1} gamma_lower(1-p, b u)``; for ``b = 0`` it reduces to
    ``a u^{1-p} / (1-p)``.
    """

    name = "etsp"
    param_names = ("a", "b", "p")
    transforms = ("log", "log", "logit")
    bounds = ((-30.0, 10.0), (-25.0, 5.0), (-12.0, 12.0))

    def init_from_rate(self, rate):
        p = 0.5
        b = 0.01
        a = rate * HORIZON / (HORIZON ** (1.0 - p) / (1.0 - p))
        return np.array([a, b, p])

    def _cumhaz(self, th, u, grad):
        a, b, p = th
        shape = np.broadcast_shapes(u.shape, a.shape, b.shape, p.shape)
        a, b, p, u = (np.broadcast_to(v, shape).astype(float) for v in (a, b, p, u))
        s = 1.0 - p
        val = np.zeros(shape)
        g = [np.zeros(shape) for _ in range(3)] if grad else None
        pos = u > 0
        zero_b = pos & (b == 0)
        if zero_b.any():
            us = u[zero_b] ** s[zero_b]
            val[zero_b] = a[zero_b] * us / s[zero_b]
            if grad:
                ss, uu, aa = s[zero_b], u[zero_b], a[zero_b]
                g[0][zero_b] = us / ss
                g[1][zero_b] = -aa * uu ** (ss + 1.0) / (ss + 1.0)
                dHds = aa * us * (np.log(uu) / ss - 1.0 / ss ** 2)
                g[2][zero_b] = -dHds
        m = pos & (b > 0)
        if m.any():
            aa, bb, ss, uu = a[m], b[m], s[m], u[m]
            x = bb * uu
            lb = np.log(bb)
            scale = np.exp(-ss * lb + special.gammaln(ss))
            P = special.gammainc(ss, x)
            H = aa * scale * P
            val[m] = H
            if grad:
                g[0][m] = scale * P
                scale1 = np.exp(-(ss + 1.0) * lb + special.gammaln(ss + 1.0))
                g[1][m] = -aa * scale1 * special.gammainc(ss + 1.0, x)
                _, Ps = gammainc_and_da(ss, x)
                dHds = aa * scale * (-lb * P + special.digamma(ss) * P + Ps)
                g[2][m] = -dHds
        return val, g

    def _loghaz(self, th, u, grad):
        a, b, p = th
        with np.errstate(divide="ignore"):
            lu = np.log(u)
        val = np.log(a) - p * lu - b * u
        if not grad:
            return val, None
        return val, [1.0 / a + 0.0 * u, -u + 0.0 * a, -lu + 0.0 * a]


FAMILIES = {
    "exponential": Exponential,
    "pwexp": PiecewiseExponential,
    "weibull": Weibull,
    "gengamma": GeneralizedGamma,
    "lognormal": LogNormal,
    "gompertz": Gompertz,
    "etsp": ETSP,
}


def get_family(family, **kwargs) -> HazardFamily:
    """Return a family instance from a name or pass an instance through."""
    if isinstance(family, HazardFamily):
        return family
    try:
        cls = FAMILIES[str(family).lower()]
    except KeyError:
        raise ValueError(
            f"unknown family {family!r}; choose from {', '.join(FAMILIES)}"
        ) from None
    return cls(**kwargs)


def _natural(family, theta):
    theta = np.asarray(theta, dtype=float)
    family.check_natural(theta)
    return theta


def hazard(family, theta, u):
    """Hazard ``h(u)`` of a family at natural parameters ``theta``."""
    family = get_family(family)
    theta = _natural(family, theta)
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("ages must be nonnegative")
    return np.exp(family.loghaz(theta, u))


def cumulative_hazard(family, theta, u0, u1):
    """Integrated hazard of a family over ``[u0, u1]``."""
    family = get_family(family)
    theta = _natural(family, theta)
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    if np.any(u0 < 0) or np.any(u1 < 0):
        raise ValueError("ages must be nonnegative")
    if np.any(u1 < u0):
        raise ValueError("cumulative hazard requires u0 <= u1")
    return family.cumhaz0(theta, u1) - family.cumhaz0(theta, u0)


def survival(family, theta, u):
    """Survival ``exp(-H(0, u))`` of a single family."""
    return np.exp(-cumulative_hazard(family, theta, 0.0, u))


@dataclass(frozen=True)
class ParamVector:
    """Per-period parameters stored on the unconstrained scale.

    Attributes
    ----------
    family : HazardFamily
    eta : ndarray of shape (n_periods, n_params)
    """

    family: HazardFamily
    eta: np.ndarray

    def __post_init__(self):
        eta = np.atleast_2d(np.asarray(self.eta, dtype=float))
        if eta.shape[1] != self.family.n_params:
            raise ValueError("parameter array does not match the family")
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_natural(cls, family, natural) -> "ParamVector":
        family = get_family(family)
        natural = np.atleast_2d(np.asarray(natural, dtype=float))
        return cls(family, family.to_unconstrained(natural))

    @classmethod
    def from_flat(cls, family, flat, n_periods) -> "ParamVector":
        family = get_family(family)
        return cls(family, np.asarray(flat, dtype=float).reshape(n_periods, family.n_params))

    @property
    def natural(self) -> np.ndarray:
        return self.family.to_natural(self.eta)

    @property
    def flat(self) -> np.ndarray:
        return self.eta.ravel().copy()

    @property
    def n_periods(self) -> int:
        return self.eta.shape[0]


def period_windows(birth, grid: PeriodGrid, x):
    """Age windows spent in each period before age ``x``.

    Returns
    -------
    lo, hi : ndarray of shape (n, n_periods)
        Window bounds, with ``hi == lo`` where the window is empty.
    """
    birth = np.atleast_1d(np.asarray(birth, dtype=float))
    x = np.broadcast_to(np.atleast_1d(np.asarray(x, dtype=float)), birth.shape)
    a = grid.starts[None, :] - birth[:, None]
    end = a + grid.lengths[None, :]
    lo = np.maximum(a, 0.0)
    hi = np.minimum(x[:, None], end)
    hi = np.maximum(hi, lo)
    return lo, hi


def _as_params(family, params, grid):
    if isinstance(params, ParamVector):
        pv = params
    else:
        pv = ParamVector.from_natural(family, params)
    if pv.n_periods != grid.n_periods:
        raise ValueError(
            f"parameters cover {pv.n_periods} periods but the grid has {grid.n_periods}"
        )
    return pv


def period_cumulative_hazard(family, params, birth, grid: PeriodGrid, x):
    """Cumulative hazard to age ``x`` for children born at ``birth``.

    Parameters
    ----------
    family : str or HazardFamily
    params : ParamVector or array of natural parameters, shape (P, k)
    birth : float or array
        Birth dates (CMC).
    grid : PeriodGrid
    x : float or array
        Ages in months.

    Returns
    -------
    ndarray
        Cumulative hazard per child.  Exposure outside the grid contributes
        nothing.
    """
    family = get_family(family)
    pv = _as_params(family, params, grid)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("ages must be nonnegative")
    lo, hi = period_windows(birth, grid, x)
    theta = pv.natural
    total = np.zeros(lo.shape[0])
    for p in range(grid.n_periods):
        act = hi[:, p] > lo[:, p]
        if act.any():
            tp = theta[p]
            total[act] += family.cumhaz0(tp, hi[act, p]) - family.cumhaz0(tp, lo[act, p])
    return total if np.ndim(birth) or np.ndim(x) else float(total[0])


def survival_curve(family, params, birth, grid: PeriodGrid, ages):
    """Survival probabilities at ``ages`` for a child born at ``birth``."""
    ages = np.atleast_1d(np.asarray(ages, dtype=float))
    b = np.full(ages.shape, float(birth))
    return np.exp(-period_cumulative_hazard(family, params, b, grid, ages))


def synthetic_survival(family, theta_p, ages):
    """Survival of a hypothetical child exposed to one period's hazard throughout."""
    family = get_family(family)
    theta_p = _natural(family, theta_p)
    ages = np.asarray(ages, dtype=float)
    return np.exp(-family.cumhaz0(theta_p, ages))


def rate_summary(curve: Callable) -> dict:
    """Neonatal, infant and under-five mortality from a survival curve.

    ``curve`` maps ages in months to survival probabilities.
    """
    s = np.asarray(curve(np.array([1.0, 12.0, HORIZON])), dtype=float)
    return {"nmr": 1.0 - s[0], "imr": 1.0 - s[1], "u5mr": 1.0 - s[2]}
