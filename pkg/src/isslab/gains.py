"""Observer gains: scalar gain validation, the Volterra integral equation
for the distributed gain, and the derived target-system quantities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import (IterationError, KernelKind, TriGrid,
                      _trapezoid_row_weights, eval_m, eval_m_z_at0)

_PICARD_TOL = 1e-12
_PICARD_CAP = 200


@dataclass(frozen=True)
class GainProfile:
    """Distributed and scalar observer gains plus derived quantities.

    b is the Robin coefficient of the estimation-error target system,
    b = q + p0 - c0/2 > 0; kp is the output-feedback coupling gain profile
    (filled by compute_kp, None until then).
    """

    p0: float
    p: np.ndarray = field(repr=False)
    b: float
    residual: float
    iterations: int
    kp: np.ndarray | None = field(default=None, repr=False)


def validate_p0(p0: float, c0: float, q: float) -> dict:
    """The scalar gain must exceed c0/2 - q (strictly); margin is the
    distance to that threshold."""
    if c0 <= 0 or q <= 0:
        raise ValueError("c0 and q must be positive")
    margin = p0 - (c0 / 2 - q)
    return {"valid": margin > 0, "margin": margin}


def solve_p(m: TriGrid, p0: float, q: float,
            m_z0: np.ndarray | None = None,
            seed: np.ndarray | None = None) -> GainProfile:
    """Solve p(x) = -m_z(x,0) + (q+p0) m(x,0) + int_0^x m(x,z) p(z) dz by
    Picard iteration with trapezoid quadrature on the grid of m.

    The boundary derivative m_z(x,0) defaults to the analytic closed form
    (it feeds a gain, so finite-differencing it would propagate avoidable
    error into every simulation); m(x,0) comes from the grid's first column.
    Non-convergence raises IterationError; the equation is a Volterra
    contraction, so that signals a grid or quadrature bug rather than a
    genuine mathematical obstruction.
    """
    if m.kind is not KernelKind.M:
        raise ValueError("solve_p needs the observer kernel grid (kind M)")
    check = validate_p0(p0, m.c0, q)
    if not check["valid"]:
        raise ValueError(
            f"scalar gain p0={p0} violates p0 > c0/2 - q (margin {check['margin']:.3e})"
        )
    n, h = m.n, m.h
    xs = m.nodes
    if m_z0 is None:
        m_z0 = eval_m_z_at0(xs, m.c0)
    source = -np.asarray(m_z0, dtype=float) + (q + p0) * m.values[:, 0]
    A = h * (m.values * _trapezoid_row_weights(n))
    p = source.copy() if seed is None else np.asarray(seed, dtype=float).copy()
    for it in range(1, _PICARD_CAP + 1):
        p_new = source + A @ p
        diff = float(np.max(np.abs(p_new - p)))
        p = p_new
        if diff < _PICARD_TOL:
            break
    else:
        raise IterationError(
            f"gain iteration did not converge within {_PICARD_CAP} iterations "
            f"(last sup-change {diff:.3e})",
            residual=diff,
        )
    residual = float(np.max(np.abs(source + A @ p - p)))
    b = q + p0 - m.c0 / 2
    return GainProfile(p0=p0, p=p, b=b, residual=residual, iterations=it)


def compute_kp(gains: GainProfile, k: TriGrid) -> np.ndarray:
    """Coupling gain K_p(x) = p(x) - p0 k(x,0) - int_0^x k(x,z) p(z) dz,
    trapezoid quadrature on the grid of k."""
    if k.kind is not KernelKind.K:
        raise ValueError("compute_kp needs the state-feedback kernel grid (kind K)")
    if gains.p.size != k.n:
        raise ValueError(f"gain profile has n={gains.p.size} but kernel grid has n={k.n}")
    A = k.h * (k.values * _trapezoid_row_weights(k.n))
    return gains.p - gains.p0 * k.values[:, 0] - A @ gains.p


def solve_gains(m: TriGrid, k: TriGrid, p0: float, q: float) -> GainProfile:
    """Convenience: solve p and attach K_p in one call."""
    profile = solve_p(m, p0, q)
    kp = compute_kp(profile, k)
    return GainProfile(p0=profile.p0, p=profile.p, b=profile.b,
                       residual=profile.residual, iterations=profile.iterations, kp=kp)


def export_csv(gains: GainProfile, xs: np.ndarray, csv_path, meta_path=None) -> None:
    """Gain table `x,p,kp` plus a key=value metadata sidecar."""
    kp = gains.kp if gains.kp is not None else np.full_like(gains.p, np.nan)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("x,p,kp\n")
        for x, pv, kv in zip(xs, gains.p, kp):
            fh.write(f"{x:.17g},{pv:.17g},{kv:.17g}\n")
    if meta_path is not None:
        with open(meta_path, "w", encoding="utf-8") as fh:
            fh.write(f"p0={gains.p0:.17g}\n")
            fh.write(f"b={gains.b:.17g}\n")
            fh.write(f"residual={gains.residual:.17g}\n")
            fh.write(f"iterations={gains.iterations}\n")
