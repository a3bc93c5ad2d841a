"""Closed-form infinity-harmonic functions and pointwise operator evaluators.

Catalog evaluators take points as arrays whose last axis is the coordinate
axis and broadcast over the leading axes.  The finite-difference operators
take a scalar point function and a single point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError, NonFiniteError, PreconditionError

CATALOG_IDS = ("cone", "affine", "aronsson", "arctan2", "radial-p", "disjoint-sum")

# |grad u| below this makes the mean-value residual formula meaningless.
CRITICAL_GRADIENT = 1e-6


@dataclass(frozen=True)
class CatalogEntry:
    """One closed-form solution.

    ``smooth(x)`` is the region where the function is C^2 and the pointwise
    operators apply; ``defined(x)`` is where the closed form can be evaluated
    at all.  ``inf_laplacian(x)`` is the exact value of the un-normalized
    operator there (identically zero except for the p-harmonic radial family).
    """

    name: str
    dim: Optional[int]
    func: Callable
    smooth: Callable
    defined: Callable
    gradient: Optional[Callable] = None
    inf_laplacian: Callable = lambda x: np.zeros(np.shape(x)[:-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim is not None and x.shape[-1] != self.dim:
            raise DomainError(f"{self.name} is defined on R^{self.dim}, got a point of dimension {x.shape[-1]}")
        ok = np.asarray(self.defined(x))
        if not np.all(ok):
            bad = x[~ok] if x.ndim > 1 else x
            raise DomainError(f"{self.name} is undefined at {np.asarray(bad).tolist()}")
        return self.func(x)


@dataclass(frozen=True)
class ConeFunction:
    """C(x) = a + b |x - apex|."""

    apex: tuple
    b: float = 1.0
    a: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.a + self.b * np.linalg.norm(x - np.asarray(self.apex, dtype=float), axis=-1)

    def gradient(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.apex, dtype=float)
        return self.b * d / np.linalg.norm(d, axis=-1, keepdims=True)


def _always(x):
    return np.ones(np.shape(x)[:-1], dtype=bool)


def _cone(apex=(0.0, 0.0), b=1.0, a=0.0):
    c = ConeFunction(tuple(np.atleast_1d(np.asarray(apex, dtype=float)).tolist()), float(b), float(a))
    apex_arr = np.asarray(c.apex)
    return CatalogEntry(
        "cone", len(c.apex), c,
        smooth=lambda x: np.linalg.norm(np.asarray(x) - apex_arr, axis=-1) > 1e-12,
        defined=_always,
        gradient=c.gradient,
    )


def _affine(a=(1.0, 0.0), b=0.0):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = float(b)
    return CatalogEntry(
        "affine", a.size,
        lambda x: np.asarray(x, dtype=float) @ a + b,
        smooth=_always, defined=_always,
        gradient=lambda x: np.broadcast_to(a, np.shape(x)).copy(),
    )


def _p43(t):
    # t^(4/3) continued to t < 0 as |t|^(4/3), the real branch of (t^(1/3))^4
    return np.abs(t) ** (4.0 / 3.0)


def _aronsson():
    def grad(x):
        x = np.asarray(x, dtype=float)
        g = (4.0 / 3.0) * np.sign(x) * np.abs(x) ** (1.0 / 3.0)
        g[..., 1] *= -1
        return g

    return CatalogEntry(
        "aronsson", 2,
        lambda x: _p43(np.asarray(x)[..., 0]) - _p43(np.asarray(x)[..., 1]),
        smooth=lambda x: (np.abs(np.asarray(x)[..., 0]) > 0) & (np.abs(np.asarray(x)[..., 1]) > 0),
        defined=_always,
        gradient=grad,
    )


def _arctan2():
    def grad(x):
        x = np.asarray(x, dtype=float)
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return np.stack([-x[..., 1] / r2, x[..., 0] / r2], axis=-1)

    nonzero = lambda x: np.asarray(x)[..., 0] != 0  # noqa: E731
    return CatalogEntry(
        "arctan2", 2,
        lambda x: np.arctan(np.asarray(x)[..., 1] / np.asarray(x)[..., 0]),
        smooth=nonzero, defined=nonzero, gradient=grad,
    )


def radial_exponent(p: float, n: int) -> float:
    """Exponent (p - n)/(p - 1) of the radial p-harmonic function |x|^alpha."""
    return (p - n) / (p - 1)


def _radial_p(p=4.0, n=2, center=None):
    p, n = float(p), int(n)
    if p <= 1:
        raise DomainError(f"radial-p needs p > 1, got {p}")
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    if p == n:
        prof = lambda r: np.log(r)  # noqa: E731
        d1 = lambda r: 1.0 / r  # noqa: E731
        d2 = lambda r: -1.0 / r**2  # noqa: E731
    else:
        al = radial_exponent(p, n)
        prof = lambda r: r**al  # noqa: E731
        d1 = lambda r: al * r ** (al - 1)  # noqa: E731
        d2 = lambda r: al * (al - 1) * r ** (al - 2)  # noqa: E731

    def radius(x):
        return np.linalg.norm(np.asarray(x, dtype=float) - c, axis=-1)

    def grad(x):
        d = np.asarray(x, dtype=float) - c
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        return d1(r) * d / r

    nonzero = lambda x: radius(x) > 0  # noqa: E731
    return CatalogEntry(
        "radial-p", n,
        lambda x: prof(radius(x)),
        smooth=nonzero, defined=nonzero, gradient=grad,
        # radial functions: inf-Laplacian = R'(r)^2 R''(r)
        inf_laplacian=lambda x: d1(radius(x)) ** 2 * d2(radius(x)),
    )


def _disjoint_sum(n=5):
    n = int(n)
    if n not in (5, 7):
        raise DomainError("disjoint-sum is available in 5 or 7 variables")

    def f(x):
        x = np.asarray(x, dtype=float)
        v = np.hypot(x[..., 0], x[..., 1]) - 7.0 * np.hypot(x[..., 2], x[..., 3]) + x[..., 4]
        if n == 7:
            v = v + _p43(x[..., 5]) - _p43(x[..., 6])
        return v

    def smooth(x):
        x = np.asarray(x, dtype=float)
        ok = (np.hypot(x[..., 0], x[..., 1]) > 0) & (np.hypot(x[..., 2], x[..., 3]) > 0)
        if n == 7:
            ok &= (x[..., 5] != 0) & (x[..., 6] != 0)
        return ok

    return CatalogEntry("disjoint-sum", n, f, smooth=smooth, defined=_always)


_FACTORIES = {
    "cone": _cone,
    "affine": _affine,
    "aronsson": _aronsson,
    "arctan2": _arctan2,
    "radial-p": _radial_p,
    "disjoint-sum": _disjoint_sum,
}


def catalog_entry(name: str, **params) -> CatalogEntry:
    """Look up a catalog function by its stable identifier."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise DomainError(f"unknown catalog id {name!r}; known: {', '.join(CATALOG_IDS)}") from None
    return factory(**params)


def eval_catalog(name: str, x, **params):
    """Evaluate catalog function ``name`` at ``x`` (scalar for a single point)."""
    val = catalog_entry(name, **params)(x)
    return float(val) if np.ndim(val) == 0 else val


# ----------------------------------------------------------------------------
# finite differences

def _sample(u, y):
    v = float(u(y))
    if not math.isfinite(v):
        raise NonFiniteError(f"non-finite sample {v} at {np.asarray(y).tolist()}")
    return v


def gradient_fd(u: Callable, x, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (_sample(u, x + e) - _sample(u, x - e)) / (2 * h)
    return g


def hessian_fd(u: Callable, x, h: float = 1e-3) -> np.ndarray:
    """Central-difference Hessian (second order in h)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    u0 = _sample(u, x)
    H = np.empty((n, n))
    eye = np.eye(n) * h
    for i in range(n):
        H[i, i] = (_sample(u, x + eye[i]) - 2 * u0 + _sample(u, x - eye[i])) / h**2
        for j in range(i + 1, n):
            H[i, j] = H[j, i] = (
                _sample(u, x + eye[i] + eye[j])
                - _sample(u, x + eye[i] - eye[j])
                - _sample(u, x - eye[i] + eye[j])
                + _sample(u, x - eye[i] - eye[j])
            ) / (4 * h**2)
    return H


def infinity_laplacian_fd(u: Callable, x, h: float = 1e-3) -> float:
    """sum_ij u_i u_j u_ij with central differences for every partial."""
    if not h > 0:
        raise PreconditionError(f"step must be positive, got h={h}")
    g = gradient_fd(u, x, h)
    return float(g @ hessian_fd(u, x, h) @ g)


def _sphere_directions(dim: int, n_dirs: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        t = 2 * np.pi * np.arange(n_dirs) / n_dirs
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if dim == 3:
        # golden-angle (Fibonacci) points
        k = np.arange(n_dirs) + 0.5
        z = 1 - 2 * k / n_dirs
        phi = np.pi * (3 - math.sqrt(5)) * k
        s = np.sqrt(1 - z**2)
        return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    rng = np.random.default_rng(12345)
    v = rng.standard_normal((n_dirs, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def mean_value_residual(u: Callable, x, eps: float, n_dirs: int = 720, refine: bool = True) -> float:
    """(max + min)/2 - u(x), extremes over the sphere |y - x| = eps and x.

    In 2D the best sampled angle for each extreme is polished by a bounded
    scalar search over the neighbouring angular cell.
    """
    x = np.asarray(x, dtype=float)
    g = gradient_fd(u, x, min(1e-3, eps / 10))
    if np.linalg.norm(g) < CRITICAL_GRADIENT:
        raise PreconditionError(
            f"|grad u| = {np.linalg.norm(g):.3g} < {CRITICAL_GRADIENT} at {x.tolist()}; "
            "the mean-value expansion needs a non-critical point"
        )
    dirs = _sphere_directions(x.size, n_dirs)
    center = _sample(u, x)
    vals = np.array([_sample(u, x + eps * d) for d in dirs])
    hi, lo = vals.max(), vals.min()
    if refine and x.size == 2:
        step = 2 * np.pi / n_dirs

        def on_circle(t):
            return _sample(u, x + eps * np.array([math.cos(t), math.sin(t)]))

        for k, sign in ((int(np.argmax(vals)), -1.0), (int(np.argmin(vals)), 1.0)):
            t0 = 2 * np.pi * k / n_dirs
            res = minimize_scalar(lambda t: sign * on_circle(t), bounds=(t0 - step, t0 + step),
                                  method="bounded", options={"xatol": 1e-12})
            v = on_circle(res.x)
            hi, lo = max(hi, v), min(lo, v)
    hi, lo = max(hi, center), min(lo, center)
    return 0.5 * (hi + lo) - center
