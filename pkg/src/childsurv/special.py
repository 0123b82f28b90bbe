"""Special-function helpers used by the hazard families.

The derivative of the regularized incomplete gamma function with respect to
its shape argument has no convenient closed form; it is obtained by automatic
differentiation of ``jax.scipy.special.gammainc``.  JAX is imported lazily so
that families which do not need it stay cheap to load.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate, special

__all__ = ["gammainc_and_da", "log1mexp", "etsp_cumhaz_quad"]


@lru_cache(maxsize=1)
def _jax_kernels():
    import jax

    jax.config.update("jax_enable_x64", True)
    import jax.numpy as jnp
    from jax.scipy.special import gammainc

    def lower(a, x):
        return gammainc(a, x)

    da = jax.vmap(jax.grad(lower, argnums=0))
    return jax.jit(da), jnp


def _bucket(n: int) -> int:
    size = 64
    while size < n:
        size *= 2
    return size


def gammainc_and_da(a, x):
    """Regularized lower incomplete gamma ``P(a, x)`` and ``dP/da``.

    Parameters
    ----------
    a, x : array_like
        Shape (positive) and argument (nonnegative), broadcast together.

    Returns
    -------
    p, dp_da : ndarray
    """
    a, x = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x, dtype=float))
    shape = a.shape
    a = a.ravel()
    x = x.ravel()
    p = special.gammainc(a, x)
    out = np.zeros_like(p)
    live = (x > 0) & np.isfinite(x)
    if live.any():
        kernel, jnp = _jax_kernels()
        av, xv = a[live], x[live]
        n = av.size
        size = _bucket(n)
        ap = np.ones(size)
        xp = np.ones(size)
        ap[:n] = av
        xp[:n] = xv
        out[live] = np.asarray(kernel(jnp.asarray(ap), jnp.asarray(xp)))[:n]
    return p.reshape(shape), out.reshape(shape)


def log1mexp(x):
    """``log(1 - exp(-x))`` for ``x > 0``, accurate for small and large ``x``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x < np.log(2.0), np.log(-np.expm1(-x)), np.log1p(-np.exp(-x)))


def etsp_cumhaz_quad(a: float, b: float, p: float, u0: float, u1: float) -> float:
    """Cumulative hazard of the exponentially truncated shifted power family by quadrature.

    Integrates ``a u^{-p} exp(-b u)`` over ``[u0, u1]`` after the substitution
    ``v = u^{1-p}``, which removes the singularity at zero and leaves the smooth
    integrand ``a / (1-p) * exp(-b v^{1/(1-p)})``.
    """
    s = 1.0 - p
    v0, v1 = u0 ** s, u1 ** s

    def f(v):
        return np.exp(-b * v ** (1.0 / s))

    val, _ = integrate.quad(f, v0, v1, epsabs=1e-13, epsrel=1e-12, limit=200)
    return a / s * val
