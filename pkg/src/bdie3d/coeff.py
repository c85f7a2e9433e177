"""Variable diffusion coefficients and manufactured verification problems.

The coefficient a(x) enters the operator u -> div(a grad u) and every
parametrix-based kernel through a, grad(ln a) and lap(ln a).  All presets are
closed forms with hand-coded derivatives so the verification tests can rely on
exact derivative fields instead of automatic differentiation.  Every callable
accepts arrays of shape (..., 3) and broadcasts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError

ScalarField = Callable[[np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray], np.ndarray]

COEFFICIENT_PRESETS = ("constant_one", "exp_x3", "quadratic_1px1sq", "linear_half_x3")
SOLUTION_PRESETS = ("one", "x1", "x3", "x1_squared", "norm_squared")


@dataclass(frozen=True)
class CoefficientField:
    """A positive coefficient with its derived fields.

    ``grad_log`` and ``laplacian_log`` are grad(ln a) and lap(ln a); the
    bounds ``a_min``/``a_max`` are valid on the unit cube and the unit ball.
    Immutable, safe for concurrent reads.
    """

    name: str
    value: ScalarField
    grad: VectorField
    grad_log: VectorField
    laplacian_log: ScalarField
    a_min: float
    a_max: float
    is_constant: bool = False


def _pts(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.shape[-1] != 3:
        raise ValueError(f"expected points of shape (..., 3), got {p.shape}")
    return p


def _zeros_like_scalar(x):
    return np.zeros(_pts(x).shape[:-1])


def _zeros_like_vector(x):
    return np.zeros(_pts(x).shape)


def preset_coefficient(name: str) -> CoefficientField:
    """Return one of the built-in coefficient fields.

    ``constant_one``     a = 1
    ``exp_x3``           a = exp(x3)
    ``quadratic_1px1sq`` a = 1 + x1^2
    ``linear_half_x3``   a = 1 + x3/2
    """
    if name == "constant_one":
        return CoefficientField(
            name=name,
            value=lambda x: np.ones(_pts(x).shape[:-1]),
            grad=_zeros_like_vector,
            grad_log=_zeros_like_vector,
            laplacian_log=_zeros_like_scalar,
            a_min=1.0,
            a_max=1.0,
            is_constant=True,
        )
    if name == "exp_x3":

        def val(x):
            return np.exp(_pts(x)[..., 2])

        def grad(x):
            p = _pts(x)
            g = np.zeros(p.shape)
            g[..., 2] = np.exp(p[..., 2])
            return g

        def grad_log(x):
            p = _pts(x)
            g = np.zeros(p.shape)
            g[..., 2] = 1.0
            return g

        return CoefficientField(
            name=name,
            value=val,
            grad=grad,
            grad_log=grad_log,
            laplacian_log=_zeros_like_scalar,
            a_min=float(np.exp(-1.0)),
            a_max=float(np.e),
        )
    if name == "quadratic_1px1sq":

        def val(x):
            return 1.0 + _pts(x)[..., 0] ** 2

        def grad(x):
            p = _pts(x)
            g = np.zeros(p.shape)
            g[..., 0] = 2.0 * p[..., 0]
            return g

        def grad_log(x):
            p = _pts(x)
            g = np.zeros(p.shape)
            g[..., 0] = 2.0 * p[..., 0] / (1.0 + p[..., 0] ** 2)
            return g

        def lap_log(x):
            x1 = _pts(x)[..., 0]
            a = 1.0 + x1**2
            return (2.0 - 2.0 * x1**2) / a**2

        return CoefficientField(
            name=name,
            value=val,
            grad=grad,
            grad_log=grad_log,
            laplacian_log=lap_log,
            a_min=1.0,
            a_max=2.0,
        )
    if name == "linear_half_x3":

        def val(x):
            return 1.0 + 0.5 * _pts(x)[..., 2]

        def grad(x):
            p = _pts(x)
            g = np.zeros(p.shape)
            g[..., 2] = 0.5
            return g

        def grad_log(x):
            p = _pts(x)
            g = np.zeros(p.shape)
            g[..., 2] = 0.5 / (1.0 + 0.5 * p[..., 2])
            return g

        def lap_log(x):
            a = 1.0 + 0.5 * _pts(x)[..., 2]
            return -0.25 / a**2

        return CoefficientField(
            name=name,
            value=val,
            grad=grad,
            grad_log=grad_log,
            laplacian_log=lap_log,
            a_min=0.5,
            a_max=1.5,
        )
    raise ConfigurationError(f"unknown coefficient preset {name!r}; known: {COEFFICIENT_PRESETS}")


@dataclass(frozen=True)
class SolutionField:
    """A closed-form candidate solution with gradient and Laplacian."""

    name: str
    value: ScalarField
    grad: VectorField
    laplacian: ScalarField


def preset_solution(name: str) -> SolutionField:
    """Return one of the built-in exact solutions used to manufacture data."""
    if name == "one":
        return SolutionField(name, lambda x: np.ones(_pts(x).shape[:-1]), _zeros_like_vector, _zeros_like_scalar)
    if name == "x1":

        def g(x):
            v = np.zeros(_pts(x).shape)
            v[..., 0] = 1.0
            return v

        return SolutionField(name, lambda x: _pts(x)[..., 0], g, _zeros_like_scalar)
    if name == "x3":

        def g(x):
            v = np.zeros(_pts(x).shape)
            v[..., 2] = 1.0
            return v

        return SolutionField(name, lambda x: _pts(x)[..., 2], g, _zeros_like_scalar)
    if name == "x1_squared":

        def g(x):
            p = _pts(x)
            v = np.zeros(p.shape)
            v[..., 0] = 2.0 * p[..., 0]
            return v

        return SolutionField(
            name,
            lambda x: _pts(x)[..., 0] ** 2,
            g,
            lambda x: np.full(_pts(x).shape[:-1], 2.0),
        )
    if name == "norm_squared":
        return SolutionField(
            name,
            lambda x: np.sum(_pts(x) ** 2, axis=-1),
            lambda x: 2.0 * _pts(x),
            lambda x: np.full(_pts(x).shape[:-1], 6.0),
        )
    raise ConfigurationError(f"unknown solution preset {name!r}; known: {SOLUTION_PRESETS}")


def manufactured_source(coefficient: CoefficientField, solution: SolutionField) -> ScalarField:
    """Closed-form f = div(a grad u) = a lap(u) + grad(a) . grad(u)."""

    def f(x):
        p = _pts(x)
        return coefficient.value(p) * solution.laplacian(p) + np.sum(
            coefficient.grad(p) * solution.grad(p), axis=-1
        )

    return f


@dataclass(frozen=True)
class ManufacturedProblem:
    """Exact solution plus the coefficient and the source it induces."""

    name: str
    coefficient: CoefficientField
    exact_u: ScalarField
    exact_grad_u: VectorField
    source_f: ScalarField


def make_manufactured(coefficient_name: str, solution_name: str) -> ManufacturedProblem:
    """Compose a coefficient preset and a solution preset into a test problem."""
    a = preset_coefficient(coefficient_name)
    u = preset_solution(solution_name)
    return ManufacturedProblem(
        name=f"u={solution_name}, a={coefficient_name}",
        coefficient=a,
        exact_u=u.value,
        exact_grad_u=u.grad,
        source_f=manufactured_source(a, u),
    )


def conormal_derivative(problem: ManufacturedProblem, x, n) -> np.ndarray:
    """Classical conormal derivative a(x) * grad(u)(x) . n for unit normal n."""
    p = _pts(x)
    nv = np.asarray(n, dtype=float)
    nrm = np.linalg.norm(nv, axis=-1)
    if not np.allclose(nrm, 1.0, atol=1e-10):
        raise ValueError("normal vectors must have unit length")
    return problem.coefficient.value(p) * np.sum(problem.exact_grad_u(p) * nv, axis=-1)
