"""Volterra transforms and boundary control laws on discrete state fields.

Trapezoid quadrature throughout, matched to the finite-difference grid, so
discrete identities such as w(1) = u(1) - U hold exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import TriGrid, _trapezoid_row_weights


@dataclass(frozen=True)
class StateField:
    """One spatial profile on the uniform grid x_i = i/(n-1)."""

    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("state field must be a 1-D array with n >= 2")
        if not np.all(np.isfinite(v)):
            raise ValueError("state field contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    def linf(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check_match(field_n: int, kernel: TriGrid):
    if field_n != kernel.n:
        raise ValueError(f"field has n={field_n} but kernel grid has n={kernel.n}")


def transform_matrix(kernel: TriGrid) -> np.ndarray:
    """h-scaled trapezoid-weighted kernel matrix A with
    (A u)_i = int_0^{x_i} kernel(x_i, z) u(z) dz."""
    W = _trapezoid_row_weights(kernel.n)
    return kernel.h * (kernel.values * W)


def forward_values(u: np.ndarray, kernel_matrix: np.ndarray) -> np.ndarray:
    """Raw-array fast path: w = u - A u."""
    return u - kernel_matrix @ u


def inverse_values(w: np.ndarray, inverse_kernel_matrix: np.ndarray) -> np.ndarray:
    """Raw-array fast path: u = w + A w."""
    return w + inverse_kernel_matrix @ w


def forward_transform(field: StateField, kernel: TriGrid) -> StateField:
    """w(x) = u(x) - int_0^x kernel(x,z) u(z) dz (trapezoid per row)."""
    _check_match(field.n, kernel)
    return StateField(values=forward_values(field.values, transform_matrix(kernel)),
                      time=field.time)


def inverse_transform(field: StateField, inverse_kernel: TriGrid) -> StateField:
    """u(x) = w(x) + int_0^x inverse_kernel(x,z) w(z) dz."""
    _check_match(field.n, inverse_kernel)
    return StateField(values=inverse_values(field.values, transform_matrix(inverse_kernel)),
                      time=field.time)


def boundary_row_weights(kernel: TriGrid) -> np.ndarray:
    """h-scaled trapezoid weights of kernel(1, .) over [0, 1]."""
    n = kernel.n
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return kernel.h * w * kernel.values[n - 1]


def control_state_feedback(u: StateField, k: TriGrid) -> float:
    """U = int_0^1 k(1, z) u(z) dz by trapezoid."""
    _check_match(u.n, k)
    return float(boundary_row_weights(k) @ u.values)


def control_output_feedback(u_hat: StateField, k: TriGrid) -> float:
    """Same law evaluated on the observer state."""
    return control_state_feedback(u_hat, k)
