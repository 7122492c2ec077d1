"""Comparison-geometry monitors: isoperimetric and Cheeger-type bounds,
negative-Ricci integral norms, and the per-sample record rows that flow
runs emit.

Everything here is a one-sided certificate. The lateral families searched
(slabs between two slices, caps on sphere topology) contain candidate
minimizers but provably bound the true infima from one side only; outputs
are labeled accordingly and never asserted as two-sided values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DegenerateFiber, ValidationError

__all__ = [
    "DiagnosticsRecord",
    "lateral_isoperimetric",
    "kpw",
    "cheeger_witness",
    "record",
    "records_to_csv",
    "write_records_csv",
]

RECORD_FIELDS = (
    "t",
    "Vol",
    "F",
    "F_tilde",
    "max_riem",
    "min_psi",
    "L",
    "lambda1",
    "inj_proxy",
    "collapse_scalar",
    "iso_lateral",
    "kpw_value",
    "vol_residual",
    "dissipation_residual",
)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One monitoring row; lambda1 and the residuals are nan when unset.

    collapse_scalar = inj_proxy^2 * sqrt(max_riem) is scale-invariant;
    F_tilde = Vol^{1/3} * F is the scale-free energy for n = 3.
    """

    t: float
    Vol: float
    F: float
    F_tilde: float
    max_riem: float
    min_psi: float
    L: float
    lambda1: float
    inj_proxy: float
    collapse_scalar: float
    iso_lateral: float
    kpw_value: float
    vol_residual: float
    dissipation_residual: float


def _slab_quantities(m: geometry.WarpedMetric):
    """Prefix volumes and slice areas for the lateral domain family.

    Returns (cut positions i < j as index grids, slab volume, complement
    volume, boundary area) flattened over all admissible pairs.
    """
    fa = m.fiber.fiber_area
    dens = m.psi**2 * m.phi
    # cumulative trapezoid volume up to each node
    seg = 0.5 * m.hx * (dens[1:] + dens[:-1])
    prefix = np.concatenate(([0.0], np.cumsum(seg))) * fa
    if m.is_sphere:
        total = prefix[-1]
    else:
        wrap = 0.5 * m.hx * (dens[-1] + dens[0]) * fa
        total = prefix[-1] + wrap
    area = fa * m.psi**2

    i, j = np.triu_indices(m.n, k=1)
    vol_in = prefix[j] - prefix[i]
    vol_out = total - vol_in
    bdry = area[i] + area[j]
    return vol_in, vol_out, bdry, total


def lateral_isoperimetric(m: geometry.WarpedMetric) -> float:
    """Upper bound for the isoperimetric constant from lateral domains.

    Minimizes Area(boundary) / min(Vol_in, Vol_out)^{2/3} over all slabs
    {x_i < x < x_j}; on sphere topology the pole slices have zero area, so
    the same scan covers the polar caps. The true infimum runs over all
    domains, so this value only bounds it from above.
    """
    vol_in, vol_out, bdry, _ = _slab_quantities(m)
    small = np.minimum(vol_in, vol_out)
    ok = small > 0.0
    ratios = bdry[ok] / small[ok] ** (2.0 / 3.0)
    return float(np.min(ratios))


def kpw(m: geometry.WarpedMetric, lam: float, p: float) -> float:
    """Integral norm of the Ricci defect: ∫ max(0, 2*lam - ricci_min)^p dV."""
    if lam > 0:
        raise ValidationError(f"lam must be <= 0, got {lam}")
    if not p > 1.5:
        raise ValidationError(f"p must exceed 3/2, got {p}")
    prof = geometry.curvature_profile(m)
    defect = np.maximum(0.0, 2.0 * lam - prof.ricci_min)
    w = geometry.quad_weights(m.n, m.hx, periodic=not m.is_sphere, scheme="trapezoid")
    dv = m.fiber.fiber_area * m.psi**2 * m.phi
    return float(np.sum(w * defect**p * dv))


def _rayleigh_k0(m: geometry.WarpedMetric, f: np.ndarray) -> float:
    """Rayleigh quotient of an s-only test function after dV-mean removal."""
    w = geometry.quad_weights(m.n, m.hx, periodic=not m.is_sphere, scheme="trapezoid")
    dv = w * m.fiber.fiber_area * m.psi**2 * m.phi
    f = f - np.sum(dv * f) / np.sum(dv)
    if m.is_sphere:
        fx = np.gradient(f, m.hx, edge_order=2)
    else:
        fx = (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * m.hx)
    fs = fx / m.phi
    num = float(np.sum(dv * fs**2))
    den = float(np.sum(dv * f**2))
    return num / den


def cheeger_witness(m: geometry.WarpedMetric) -> tuple[float, float]:
    """(h_upper, lambda_upper): certified upper bounds for the Cheeger
    constant and the first eigenvalue.

    h_upper minimizes Area/min(Vol_in, Vol_out) over the lateral family.
    lambda_upper is the Rayleigh quotient of a two-plateau test function
    built on the h-minimizing cut (1 inside, constant outside, smoothed
    over a few nodes, dV-mean removed); any admissible function bounds the
    infimum, so both values certify smallness only.
    """
    vol_in, vol_out, bdry, _ = _slab_quantities(m)
    small = np.minimum(vol_in, vol_out)
    ok = small > 0.0
    ratios = np.where(ok, bdry / np.maximum(small, 1e-300), np.inf)
    h_upper = float(np.min(ratios))

    i, j = np.triu_indices(m.n, k=1)
    best = int(np.argmin(ratios))
    i0, j0 = int(i[best]), int(j[best])
    ramp = max(2, m.n // 16)
    f = np.zeros(m.n)
    idx = np.arange(m.n)
    inside = (idx >= i0) & (idx <= j0)
    f[inside] = 1.0
    for edge in (i0, j0):
        for k in range(-ramp, ramp + 1):
            pos = edge + k
            if m.is_sphere:
                pos = min(max(pos, 0), m.n - 1)
            else:
                pos %= m.n
            frac = 0.5 * (1.0 + math.sin(0.5 * math.pi * k / ramp))
            val = frac if edge == i0 else 1.0 - frac
            f[pos] = val
    lambda_upper = _rayleigh_k0(m, f)
    return h_upper, lambda_upper


def record(
    m: geometry.WarpedMetric,
    t: float = 0.0,
    lambda1: float = math.nan,
    vol_residual: float = math.nan,
    dissipation_residual: float = math.nan,
    volume_value: float | None = None,
    energy_value: float | None = None,
) -> DiagnosticsRecord:
    """Assemble one monitoring row for a metric.

    volume_value / energy_value let a flow run supply its own discrete
    functionals so the residual columns stay consistent with the dynamics
    that produced them; by default the reference quadratures are used.
    Curvature-dependent columns degrade to nan if the fiber has pinched
    (DegenerateFiber) instead of failing the whole row.
    """
    vol = geometry.volume(m) if volume_value is None else float(volume_value)
    _, L = geometry.arclength(m)
    nonc = geometry.noncollapse_quantities(m)
    try:
        prof = geometry.curvature_profile(m)
        max_riem = float(np.max(prof.riem_sq))
        f_val = geometry.energy(m) if energy_value is None else float(energy_value)
        iso = lateral_isoperimetric(m)
        kpw_value = kpw(m, 0.0, 2.0)
    except DegenerateFiber:
        max_riem = math.nan
        f_val = math.nan if energy_value is None else float(energy_value)
        iso = lateral_isoperimetric(m)
        kpw_value = math.nan
    f_tilde = vol ** (1.0 / 3.0) * f_val
    collapse = nonc.inj_proxy**2 * math.sqrt(max_riem) if max_riem == max_riem else math.nan
    return DiagnosticsRecord(
        t=float(t),
        Vol=vol,
        F=f_val,
        F_tilde=f_tilde,
        max_riem=max_riem,
        min_psi=nonc.min_psi,
        L=L,
        lambda1=float(lambda1),
        inj_proxy=nonc.inj_proxy,
        collapse_scalar=collapse,
        iso_lateral=iso,
        kpw_value=kpw_value,
        vol_residual=float(vol_residual),
        dissipation_residual=float(dissipation_residual),
    )


def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.17g}"


def records_to_csv(records) -> str:
    """CSV text with columns exactly in DiagnosticsRecord field order."""
    lines = [",".join(RECORD_FIELDS)]
    for r in records:
        lines.append(",".join(_fmt(getattr(r, name)) for name in RECORD_FIELDS))
    return "\n".join(lines) + "\n"


def write_records_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(records_to_csv(records))
