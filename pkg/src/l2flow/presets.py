"""Named starting metrics used by the CLI scenarios, tests, and scripts.

Each function returns a validated WarpedMetric. Scales follow the convention
that `scale` multiplies lengths (the metric gets scale^2); the S2xS1 family
uses the metric coefficient A directly, matching the homogeneous-product
parametrization A*g_S2 + A^(-2)*g_S1.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import (
    ROUND_S2_FIBER,
    FiberSpec,
    Topology,
    WarpedMetric,
    from_profile,
)


def round_s3(
    n_nodes: int = 201,
    stretch: float = 0.0,
    scale: float = 1.0,
    curvature_norm: str = "paper",
) -> WarpedMetric:
    """Round 3-sphere of radius `scale` as a SphereSO3 warped product.

    stretch = 0 gives the canonical gauge phi = const (uniform arclength
    sampling). A nonzero stretch reparametrizes the same geometry through
    s(x) = (pi/2)(x + stretch*p(x) + 1) with p = (7x - 10x^3 + 3x^5)/3,
    handy for convergence studies where the uniform gauge is too accurate to
    measure (quadrature of the canonical profile is spectrally exact). p is
    chosen with p(+-1) = p''(+-1) = 0 so the lateral density keeps phi' = 0
    at the poles (the pole ghost mirroring needs that) while higher endpoint
    derivatives survive and quadrature errors stay measurable.
    """
    if not -0.37 < stretch < 0.37:
        raise ValueError("stretch must stay in (-0.37, 0.37) to keep phi positive")
    x = np.linspace(-1.0, 1.0, n_nodes)
    p = (7.0 * x - 10.0 * x**3 + 3.0 * x**5) / 3.0
    dp = (7.0 - 30.0 * x**2 + 15.0 * x**4) / 3.0
    s_unit = (math.pi / 2.0) * (x + stretch * p + 1.0)
    phi = scale * (math.pi / 2.0) * (1.0 + stretch * dp)
    psi = scale * np.sin(s_unit)
    psi[0] = 0.0
    psi[-1] = 0.0
    return from_profile(Topology.SPHERE_SO3, ROUND_S2_FIBER, x, phi, psi, curvature_norm)


def so3_dumbbell(
    n_nodes: int = 64, neck_depth: float = 0.5, curvature_norm: str = "paper"
) -> WarpedMetric:
    """Two-lobed SO(3)-invariant sphere: psi = sin(s) (1 - neck_depth sin^2 s).

    Arclength-normalized (phi = pi/2, s in [0, pi]); neck_depth in [0, 1)
    controls how thin the equatorial neck is (fiber radius 1 - neck_depth
    at the equator).
    """
    if not 0.0 <= neck_depth < 1.0:
        raise ValueError("neck_depth must lie in [0, 1)")
    x = np.linspace(-1.0, 1.0, n_nodes)
    s = (math.pi / 2.0) * (x + 1.0)
    phi = np.full(n_nodes, math.pi / 2.0)
    psi = np.sin(s) * (1.0 - neck_depth * np.sin(s) ** 2)
    psi[0] = 0.0
    psi[-1] = 0.0
    return from_profile(Topology.SPHERE_SO3, ROUND_S2_FIBER, x, phi, psi, curvature_norm)


def warped_tube(
    n_nodes: int = 64,
    psi0: float = 2.0,
    k_sigma: int = 1,
    period: float = 1.0,
    phi0: float = 1.0,
    fiber_area: float | None = None,
    fiber_mu1: float = 2.0,
    curvature_norm: str = "paper",
) -> WarpedMetric:
    """Constant tube Sigma x S^1: phi = phi0, psi = psi0 on a periodic grid."""
    if fiber_area is None:
        fiber_area = 4.0 * math.pi
    fiber = FiberSpec(k_sigma=k_sigma, fiber_area=fiber_area, fiber_mu1=fiber_mu1)
    x = np.arange(n_nodes) * (period / n_nodes)
    phi = np.full(n_nodes, float(phi0))
    psi = np.full(n_nodes, float(psi0))
    return from_profile(Topology.CIRCLE_PRODUCT, fiber, x, phi, psi, curvature_norm)


def pinched_tube(
    n_nodes: int = 128,
    min_psi: float = 0.05,
    bulge: float = 1.0,
    period: float = 2.0 * math.pi,
    curvature_norm: str = "paper",
) -> WarpedMetric:
    """Round-fiber tube with one deep pinch: psi dips to min_psi at x = 0."""
    x = np.arange(n_nodes) * (period / n_nodes)
    phi = np.ones(n_nodes)
    psi = min_psi + bulge * 0.5 * (1.0 - np.cos(2.0 * math.pi * x / period))
    return from_profile(Topology.CIRCLE_PRODUCT, ROUND_S2_FIBER, x, phi, psi, curvature_norm)


def s2xs1(
    n_nodes: int = 64, a_scale: float = 4.0, curvature_norm: str = "paper"
) -> WarpedMetric:
    """The homogeneous family A*g_S2 + A^(-2)*g_S1 as a warped tube.

    psi = sqrt(A) (round fiber scale), phi = 1/A (so the lateral circle has
    metric coefficient B = A^(-2) over a 2*pi coordinate period).
    """
    if not a_scale > 0:
        raise ValueError("a_scale must be positive")
    return warped_tube(
        n_nodes=n_nodes,
        psi0=math.sqrt(a_scale),
        k_sigma=1,
        period=2.0 * math.pi,
        phi0=1.0 / a_scale,
        curvature_norm=curvature_norm,
    )


def hyperbolic_tube(
    n_nodes: int = 64,
    radius: float = 2.0,
    period: float = 2.0 * math.pi,
    genus: int = 2,
    fiber_mu1: float = 2.0,
    curvature_norm: str = "paper",
) -> WarpedMetric:
    """Hyperbolic-fiber tube (K_Sigma = -1, Gauss-Bonnet area 4 pi (genus-1)).

    With psi = radius constant, F = 2 * fiber_area * L / radius^2, so large
    radius gives arbitrarily low energy: the epsilon-sweep family.
    """
    if genus < 2:
        raise ValueError("hyperbolic fibers need genus >= 2")
    fiber_area = 4.0 * math.pi * (genus - 1)
    return warped_tube(
        n_nodes=n_nodes,
        psi0=radius,
        k_sigma=-1,
        period=period,
        phi0=1.0,
        fiber_area=fiber_area,
        fiber_mu1=fiber_mu1,
        curvature_norm=curvature_norm,
    )


def random_tube(
    n_nodes: int = 128,
    seed: int = 0,
    base: float = 1.5,
    rough: float = 0.1,
    period: float = 2.0 * math.pi,
    k_sigma: int = 1,
    curvature_norm: str = "paper",
) -> WarpedMetric:
    """Smooth random periodic tube for finite-difference and property tests.

    Three low Fourier modes with 1/k^2 amplitude decay on both phi and psi;
    positivity is guaranteed for rough < 1/2.
    """
    if not 0 <= rough < 0.5:
        raise ValueError("rough must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    x = np.arange(n_nodes) * (period / n_nodes)
    theta = 2.0 * math.pi * x / period
    psi = np.full(n_nodes, 1.0)
    phi = np.full(n_nodes, 1.0)
    for k in (1, 2, 3):
        psi += (rough / k**2) * rng.uniform(-1, 1) * np.cos(k * theta + rng.uniform(0, 2 * math.pi))
        phi += (0.5 * rough / k**2) * rng.uniform(-1, 1) * np.cos(
            k * theta + rng.uniform(0, 2 * math.pi)
        )
    fiber = FiberSpec(k_sigma=k_sigma, fiber_area=4.0 * math.pi, fiber_mu1=2.0)
    return from_profile(Topology.CIRCLE_PRODUCT, fiber, x, phi, base * psi, curvature_norm)
