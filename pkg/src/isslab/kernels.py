"""Control and observer kernels on the triangle 0 <= z <= x <= 1.

The direct kernels come from closed forms (Bessel ratios plus, for the
controller kernel, a convolution integral evaluated by composite
Gauss-Legendre).  The inverse kernels solve the Volterra reciprocity
relation

    l(x, z) = k(x, z) + int_z^x k(x, s) l(s, z) ds

by Picard iteration with trapezoid quadrature on the grid.  An independent
finite-difference residual check against the defining hyperbolic problems
is provided for all four kinds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import specfun

_GL_NODES, _GL_WEIGHTS = leggauss(16)
_QUAD_ATOL = 1e-11
_QUAD_MAX_PANELS = 32
_PICARD_TOL = 1e-12
_PICARD_CAP = 200


class KernelKind(enum.Enum):
    K = "K"  # state-feedback kernel, closed form
    L = "L"  # inverse of K, Volterra reciprocity
    M = "M"  # observer kernel, closed form
    N = "N"  # inverse of M, Volterra reciprocity


class IterationError(RuntimeError):
    """Picard iteration failed to converge; carries the last residual."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class TriGrid:
    """Kernel values sampled on the uniform triangular grid.

    values is an (n, n) array with entries at (x_i, z_j) = (i h, j h) for
    j <= i and zeros above the diagonal; h = 1/(n-1).
    """

    kind: KernelKind
    n: int
    c0: float
    q: float | None
    values: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def interp(self, x: float, z: float) -> float:
        """Bilinear interpolation for off-node queries inside the triangle."""
        if not (0.0 <= z <= x <= 1.0):
            raise ValueError("query point outside the triangle 0 <= z <= x <= 1")
        h = self.h
        i = min(int(x / h), self.n - 2)
        j = min(int(z / h), i)
        tx = x / h - i
        tz = z / h - j
        v = self.values
        # in the diagonal half-cell the (i, j+1) corner lies above the
        # diagonal; continue with the diagonal value
        return float(
            (1 - tx) * (1 - tz) * v[i, j]
            + tx * (1 - tz) * v[i + 1, j]
            + (1 - tx) * tz * v[i, min(j + 1, i)]
            + tx * tz * v[i + 1, j + 1]
        )

    def to_csv(self, path) -> None:
        """Row-major triangle dump, header x,z,value, 17 significant digits."""
        xs = self.nodes
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,z,value\n")
            for i in range(self.n):
                for j in range(i + 1):
                    fh.write(f"{xs[i]:.17g},{xs[j]:.17g},{self.values[i, j]:.17g}\n")


@dataclass(frozen=True)
class ResidualReport:
    interior_max: float
    bc_max: float


def _check_triangle(x, z):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(z > x + 1e-15) or np.any(z < 0) or np.any(x > 1 + 1e-15):
        raise ValueError("arguments must satisfy 0 <= z <= x <= 1")
    return x, z


def eval_k(x, z, c0: float, q: float):
    """Closed-form state-feedback kernel.

    k(x,z) = -c0 x I1(r)/r |_{r=sqrt(c0(x^2-z^2))}
             + q c0/sqrt(c0+q^2) * int_0^{x-z} e^{-q tau/2}
               I0(sqrt(c0(x+z)(x-z-tau))) sinh(sqrt(c0+q^2) tau / 2) dtau,

    the integral by composite 16-point Gauss-Legendre with panel doubling
    until the change is below 1e-11 (cap 32 panels).
    """
    if c0 <= 0 or q <= 0:
        raise ValueError("c0 and q must be positive")
    x, z = _check_triangle(x, z)
    scalar = x.ndim == 0 and np.asarray(z).ndim == 0
    x = np.atleast_1d(x)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    x, z = np.broadcast_arrays(x, z)

    r = np.sqrt(np.maximum(c0 * (x**2 - z**2), 0.0))
    out = -c0 * x * specfun.i1_over_s(r)

    beta = np.sqrt(c0 + q * q)
    span = x - z
    live = span > 0
    if np.any(live):
        xl, zl, sl = x[live], z[live], span[live]

        def quad(panels):
            total = np.zeros_like(sl)
            width = sl / panels
            for p in range(panels):
                mid = width * (p + 0.5)
                for gx, gw in zip(_GL_NODES, _GL_WEIGHTS):
                    tau = mid + 0.5 * width * gx
                    arg = np.sqrt(np.maximum(c0 * (xl + zl) * (sl - tau), 0.0))
                    total += gw * (0.5 * width) * (
                        np.exp(-q * tau / 2) * specfun.bessel_i0(arg) * np.sinh(beta * tau / 2)
                    )
            return total

        panels = 4
        prev = quad(panels)
        while panels < _QUAD_MAX_PANELS:
            panels *= 2
            cur = quad(panels)
            if np.max(np.abs(cur - prev)) < _QUAD_ATOL:
                prev = cur
                break
            prev = cur
        out[live] += q * c0 / beta * prev

    return float(out[0]) if scalar else out


def eval_m(x, z, c0: float):
    """Closed-form observer kernel  c0 (1-x) J1(r)/r  with
    r = sqrt(c0 (x-z)(2-x-z))."""
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    x, z = _check_triangle(x, z)
    r = np.sqrt(np.maximum(c0 * (x - z) * (2.0 - x - z), 0.0))
    return c0 * (1.0 - x) * specfun.j1_over_s(r)


def eval_m_z_at0(x, c0: float):
    """Analytic boundary derivative m_z(x, 0).

    Chain rule on m = c0 (1-x) R(r(z)) with R = J1/r and
    r(z)^2 = c0 (z^2 - x^2 + 2x - 2z) gives, at z = 0,
    m_z(x, 0) = -c0^2 (1-x) * R'(r0)/r0 with r0 = sqrt(c0 x (2-x)); the
    ratio R'(r)/r has the removable limit -1/8 at r = 0.
    """
    x = np.asarray(x, dtype=float)
    r0 = np.sqrt(np.maximum(c0 * x * (2.0 - x), 0.0))
    return -(c0**2) * (1.0 - x) * specfun.dj1s_ds_over_s(r0)


def _trapezoid_row_weights(n: int) -> np.ndarray:
    """W[i, j]: trapezoid weight of node j for the integral over [0, x_i]."""
    W = np.tril(np.ones((n, n)))
    W[:, 0] = 0.5
    np.fill_diagonal(W, 0.5)
    W[0, 0] = 0.0
    return W


def build_grid(kind: KernelKind, n: int, c0: float, q: float | None = None) -> TriGrid:
    """Fill a TriGrid: kinds K, M from the closed forms; L, N by inversion."""
    if n < 3:
        raise ValueError("need n >= 3")
    if kind in (KernelKind.K, KernelKind.L) and (q is None or q <= 0):
        raise ValueError("kinds K and L require q > 0")
    if kind is KernelKind.L:
        return invert_kernel(build_grid(KernelKind.K, n, c0, q))
    if kind is KernelKind.N:
        return invert_kernel(build_grid(KernelKind.M, n, c0))

    xs = np.linspace(0.0, 1.0, n)
    X, Z = np.meshgrid(xs, xs, indexing="ij")
    mask = Z <= X
    vals = np.zeros((n, n))
    if kind is KernelKind.K:
        vals[mask] = eval_k(X[mask], Z[mask], c0, q)
    else:
        vals[mask] = eval_m(X[mask], Z[mask], c0)
    return TriGrid(kind=kind, n=n, c0=c0, q=q, values=vals)


def invert_kernel(direct: TriGrid) -> TriGrid:
    """Inverse kernel by Picard iteration on the reciprocity relation
    l = k + int_z^x k(x,s) l(s,z) ds (trapezoid on the grid), stopping when
    successive iterates differ by < 1e-12 in sup norm (cap 200)."""
    if direct.kind not in (KernelKind.K, KernelKind.M):
        raise ValueError("can only invert direct kinds K and M")
    if not np.all(np.isfinite(direct.values)):
        raise ValueError("direct grid contains non-finite values")
    K = direct.values
    n = direct.n
    h = direct.h
    dK = np.diag(K).copy()
    tri = np.tril(np.ones((n, n)))
    L = K.copy()
    diff = np.inf
    stalls = 0
    for _ in range(_PICARD_CAP):
        dL = np.diag(L)
        integ = h * (K @ L) - (h / 2) * (K * dL[np.newaxis, :]) - (h / 2) * (dK[:, np.newaxis] * L)
        L_new = (K + integ) * tri
        prev = diff
        diff = float(np.max(np.abs(L_new - L)))
        L = L_new
        if diff < _PICARD_TOL:
            break
        # float64 matmul noise floors out near eps * sum|k||l|, which can sit
        # just above the nominal stop for large kernels; a plateau there is
        # converged for every downstream contract (residual < 1e-10)
        stalls = stalls + 1 if (diff < 100 * _PICARD_TOL and diff >= 0.5 * prev) else 0
        if stalls >= 3:
            break
    else:
        raise IterationError(
            f"kernel inversion did not converge within {_PICARD_CAP} iterations "
            f"(last sup-change {diff:.3e})",
            residual=diff,
        )
    out_kind = KernelKind.L if direct.kind is KernelKind.K else KernelKind.N
    return TriGrid(kind=out_kind, n=n, c0=direct.c0, q=direct.q, values=L)


def reciprocity_residual(direct: TriGrid, inverse: TriGrid) -> float:
    """Sup-norm defect of the trapezoid reciprocity relation."""
    K, L = direct.values, inverse.values
    n, h = direct.n, direct.h
    dK = np.diag(K).copy()
    dL = np.diag(L)
    integ = h * (K @ L) - (h / 2) * (K * dL[np.newaxis, :]) - (h / 2) * (dK[:, np.newaxis] * L)
    tri = np.tril(np.ones((n, n)))
    return float(np.max(np.abs((K + integ) * tri - L)))


def pde_residual(grid: TriGrid) -> ResidualReport:
    """Second-order finite-difference residual of the defining hyperbolic
    problem at interior triangle nodes, plus the kind-specific boundary
    identity (one-sided O(h^2) differences where a derivative is involved).
    """
    if grid.n < 5:
        raise ValueError("need n >= 5 for the residual stencil")
    v = grid.values
    n, h = grid.n, grid.h
    sign = 1.0 if grid.kind in (KernelKind.K, KernelKind.M) else -1.0

    # interior nodes: 1 <= j <= i-1, 2 <= i <= n-2
    i_idx, j_idx = np.meshgrid(np.arange(2, n - 1), np.arange(1, n - 1), indexing="ij")
    keep = j_idx <= i_idx - 1
    ii, jj = i_idx[keep], j_idx[keep]
    vxx = (v[ii + 1, jj] - 2 * v[ii, jj] + v[ii - 1, jj]) / h**2
    vzz = (v[ii, jj + 1] - 2 * v[ii, jj] + v[ii, jj - 1]) / h**2
    interior = np.abs(vxx - vzz - sign * grid.c0 * v[ii, jj])
    interior_max = float(np.max(interior)) if interior.size else 0.0

    if grid.kind in (KernelKind.K, KernelKind.L):
        # v_z(x, 0) = q v(x, 0), one-sided O(h^2) derivative, rows with i >= 2
        i = np.arange(2, n)
        vz0 = (-3 * v[i, 0] + 4 * v[i, 1] - v[i, 2]) / (2 * h)
        bc_max = float(np.max(np.abs(vz0 - grid.q * v[i, 0])))
    else:
        bc_max = float(np.max(np.abs(v[n - 1, :])))
    return ResidualReport(interior_max=interior_max, bc_max=bc_max)
