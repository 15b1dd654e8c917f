"""ISS diagnostics: norm series, decay-rate fits, disturbance-amplitude
sweeps, and the truncated-power monitor functional."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .kernels import TriGrid
from .sim import Resources, Scenario, SimMode, SimTrace, build_resources, family_member, simulate
from .transforms import transform_matrix

THREADS_ENV = "ISSLAB_THREADS"


@dataclass(frozen=True)
class SweepResult:
    amplitudes: np.ndarray
    sup_norms: np.ndarray
    window: tuple[float, float]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("scale,sup_norm\n")
            for a, s in zip(self.amplitudes, self.sup_norms):
                fh.write(f"{a:.17g},{s:.17g}\n")


def linf_series(trace: SimTrace, which: str = "primary"):
    """Per-stored-step sup norms; which in {primary, secondary, tilde, sum}
    (sum = primary plus tilde, the coupled-system stability metric)."""
    if trace.times.size == 0:
        raise ValueError("empty trace")
    if which == "primary":
        return trace.times, trace.linf
    if which == "secondary":
        if trace.linf_secondary is None:
            raise ValueError("trace has no secondary state")
        return trace.times, trace.linf_secondary
    if which == "tilde":
        return trace.times, trace.linf_tilde
    if which == "sum":
        return trace.times, trace.linf + trace.linf_tilde
    raise ValueError(f"unknown series selector {which!r}")


def fit_decay_rate(times, norms, window) -> float:
    """Least-squares slope of -log(norm) against t on the window."""
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    lo, hi = window
    mask = (times >= lo) & (times <= hi)
    if not np.any(mask):
        raise ValueError("window contains no samples")
    if np.any(norms[mask] <= 0):
        raise ValueError("non-positive norms in window (signal fully decayed; shrink window)")
    t = times[mask]
    y = -np.log(norms[mask])
    A = np.vstack([t, np.ones_like(t)]).T
    slope, _ = np.linalg.lstsq(A, y, rcond=None)[0]
    return float(slope)


def _sweep_metric(trace: SimTrace) -> str:
    if trace.scenario.mode is SimMode.OUTPUT_FEEDBACK:
        return "sum"
    return "primary"


def iss_sweep(base: Scenario, scales, window, resources: Resources | None = None) -> SweepResult:
    """One simulation per disturbance scale; sup of the mode's stability
    norm over the window.  Scale 0 is fully disturbance-free; nonzero
    scales set the boundary/measurement amplitudes to the scale and the
    in-domain amplitude to 2 (the reference amplitude grid)."""
    scales = np.asarray(scales, dtype=float)
    if np.any(np.diff(scales) < 0):
        raise ValueError("scales must be sorted ascending")
    lo, hi = window
    if not (0 <= lo < hi <= base.t_end + 1e-12):
        raise ValueError("window must lie inside [0, t_end]")
    res = resources or build_resources(base)

    def one(scale: float) -> float:
        member = family_member(base.mode, scale)
        scenario = replace(base, A=member.A, A0=member.A0, A1=member.A1,
                           A2=member.A2, name=member.name)
        trace = simulate(scenario, res)
        times, norms = linf_series(trace, _sweep_metric(trace))
        mask = (times >= lo) & (times <= hi)
        return float(np.max(norms[mask]))

    max_workers = int(os.environ.get(THREADS_ENV, "0")) or min(4, os.cpu_count() or 1)
    if max_workers > 1 and scales.size > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            sup = np.array(list(pool.map(one, scales)))
    else:
        sup = np.array([one(s) for s in scales])
    return SweepResult(amplitudes=scales, sup_norms=sup, window=(lo, hi))


def truncation_g(theta, r: float):
    """g(theta) = theta^r for theta >= 0, else 0."""
    theta = np.asarray(theta, dtype=float)
    return np.where(theta > 0, np.maximum(theta, 0.0) ** r, 0.0)


def truncation_G(theta, r: float):
    """G = integral of g: theta^{r+1}/(r+1) on the positive side."""
    theta = np.asarray(theta, dtype=float)
    return np.where(theta > 0, np.maximum(theta, 0.0) ** (r + 1) / (r + 1), 0.0)


def dcheck_bound(scenario: Scenario, kgrid: TriGrid, sigma: float, headroom: float = 0.01) -> float:
    """Compliant truncation level for the monitor: the maximum of the
    weighted signal suprema (initial transformed state, boundary data,
    forcing) sampled at step resolution over the horizon, plus headroom."""
    xs = scenario.nodes
    A_k = transform_matrix(kgrid)
    u0 = scenario.u0_values(xs)
    w0 = u0 - A_k @ u0
    ts = np.arange(0.0, scenario.t_end + scenario.dt / 2, scenario.dt)
    weight = np.exp(sigma * ts)
    d0c = np.max(weight * np.abs(scenario.d0(ts))) / scenario.q
    d1c = np.max(weight * np.abs(scenario.d1(ts)))
    # forcing of the target dynamics: psi = f - int k f + k(x,0) d0
    k_x0 = kgrid.values[:, 0]
    psi_sup = 0.0
    if scenario.A != 0:
        F = scenario.f(xs[:, None], ts[None, :])
        psi = F - A_k @ F + k_x0[:, None] * scenario.d0(ts)[None, :]
        psi_sup = float(np.max(weight[None, :] * np.abs(psi)))
    else:
        psi_sup = float(np.max(weight * np.abs(scenario.d0(ts))) * np.max(np.abs(k_x0)))
    c_lower = scenario.underline_c()
    if not (0 < sigma < c_lower):
        raise ValueError(f"sigma must lie in (0, {c_lower:.6g})")
    level = max(float(np.max(np.abs(w0))), d0c, d1c, psi_sup / (c_lower - sigma))
    return level * (1 + headroom)


def lyapunov_monitor(w_trace: SimTrace, sigma: float, r: float, D_check: float):
    """Monitor V(t) = int_0^1 G(e^{sigma t} w(x,t) - D_check) dx (trapezoid)
    and the mirrored functional with -w; both are non-increasing whenever
    D_check dominates the weighted data and forcing suprema."""
    scenario = w_trace.scenario
    if scenario.mode is not SimMode.TARGET_DIRECT:
        raise ValueError("monitor requires a target_direct trace")
    c_lower = scenario.underline_c()
    if not (0 < sigma < c_lower):
        raise ValueError(f"sigma must lie in (0, {c_lower:.6g})")
    if r <= 1:
        raise ValueError("truncation exponent must exceed 1")
    h = 1.0 / (scenario.n - 1)
    weight = np.exp(sigma * w_trace.times)[:, None]
    v = weight * w_trace.fields

    def vint(values):
        integrand = truncation_G(values - D_check, r)
        return h * (np.sum(integrand, axis=1) - 0.5 * integrand[:, 0] - 0.5 * integrand[:, -1])

    return w_trace.times, vint(v), vint(-v)


def transform_consistency(u_trace: SimTrace, w_trace: SimTrace, k: TriGrid) -> float:
    """Max over stored times of the sup distance between the transformed
    plant trace and the directly simulated target trace."""
    if u_trace.times.shape != w_trace.times.shape or not np.allclose(u_trace.times, w_trace.times):
        raise ValueError("traces do not share stored times")
    if u_trace.fields.shape[1] != k.n or w_trace.fields.shape[1] != k.n:
        raise ValueError("trace grids do not match the kernel grid")
    A_k = transform_matrix(k)
    transformed = u_trace.fields - u_trace.fields @ A_k.T
    return float(np.max(np.abs(transformed - w_trace.fields)))
