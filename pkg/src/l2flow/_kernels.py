"""Compiled inner loops for the gradient flow.

Everything here works on bare float64 arrays so the stepping loop can be
jitted. The discretization is a conservative second-order stencil chosen so
the energy is an explicit algebraic function of the nodal (phi, psi) values;
the gradient routine is its exact hand-written adjoint, which is what makes
the volume-rate and dissipation identities hold to pure O(dt) in the flow
module. All loops are plain scalar code: with numba present they compile,
without it the same functions run (slowly) as ordinary Python.

Discretization. Edges e carry S_e = (psi_{e+1} - psi_e)/hx and the harmonic
gauge average R_e = 2/(phi_e + phi_{e+1}), so P_e = R_e S_e approximates
psi_s at the edge midpoint. Interior nodes carry u = psi_ss, the edge average
v = psi_s, and q = k_sigma - v^2; the energy density against phi dx is
dens = 4 u^2 + 2 q^2 / psi^2. At the two nodes adjacent to SphereSO3 poles
the fiber term uses its smoothness limit (k2 -> k1), i.e. dens = 6 u^2:
the finite-difference q does not resolve k_sigma - psi_s^2 to relative
accuracy where psi_s -> 1, while u does.

Sphere pole gauge values phi_0, phi_{n-1} have zero Riesz mass (psi = 0
kills their inner-product weight), so they are slaved proportionally to
their neighbors: the neighbor absorbs the pole's energy partial through the
chain rule and the pole copies the neighbor's relative velocity. This keeps
the flow inside the admissible class and preserves the scaling homogeneity
the exact identities rely on.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


MASS_FLOOR = 1e-14
DT_FLOOR = 1e-16
VOL_GUARD_REL = 1e-8

STATUS_CHUNK_DONE = 0
STATUS_REACHED_END = 1
STATUS_RIEM_CEILING = 2
STATUS_PSI_FLOOR = 3
STATUS_DT_UNDERFLOW = 4
STATUS_SINGULAR_MASS = 5


@njit(cache=True)
def _edges(phi, psi, hx, is_sphere, S, R):
    """Fill edge slope and gauge arrays; returns the edge count."""
    n = phi.shape[0]
    ne = n - 1 if is_sphere else n
    for e in range(ne):
        f = e + 1 if e + 1 < n else 0
        S[e] = (psi[f] - psi[e]) / hx
        R[e] = 2.0 / (phi[e] + phi[f])
    return ne


@njit(cache=True)
def _functionals(phi, psi, hx, fa, ks, nf, is_sphere, S, R):
    """(F, vol, max_riem, min_ds, min_psi) of the kernel discretization.

    max_riem is taken over curvature-resolved nodes: on spheres the two
    pole-adjacent nodes are excluded, because their second differences sit
    on the grid-scale pole layer rather than on a geometric length scale,
    and feeding that into the step-size law throttles the flow for no
    stability gain. A genuine cap blow-up is still seen one node further in.
    """
    n = phi.shape[0]
    C = fa * hx
    ne = _edges(phi, psi, hx, is_sphere, S, R)

    vol = 0.0
    for j in range(n):
        vol += phi[j] * psi[j] ** 2
    vol *= C

    min_ds = 1e300
    for e in range(ne):
        ds = hx / R[e]
        if ds < min_ds:
            min_ds = ds

    jlo = 1 if is_sphere else 0
    jhi = n - 1 if is_sphere else n
    fsum = 0.0
    max_riem = 0.0
    min_psi = 1e300
    for j in range(jlo, jhi):
        el = j - 1 if j > 0 else ne - 1
        pl = R[el] * S[el]
        pr = R[j] * S[j]
        u = (pr - pl) / (hx * phi[j])
        pj = psi[j]
        if pj < min_psi:
            min_psi = pj
        pole_adj = is_sphere and (j == 1 or j == n - 2)
        if pole_adj:
            dens = 6.0 * u * u
            riem = 0.0
        else:
            v = 0.5 * (pl + pr)
            q = ks - v * v
            dens = 4.0 * u * u + 2.0 * (q / pj) ** 2
            riem = (4.0 * u * u + 2.0 * (q * q) / (pj * pj)) / (pj * pj)
        fsum += phi[j] * dens
        if riem > max_riem:
            max_riem = riem
    return C * nf * fsum, vol, nf * max_riem, min_ds, min_psi


@njit(cache=True)
def _gradient(phi, psi, hx, fa, ks, nf, is_sphere, S, R, gam, bet, lam, gphi, gpsi):
    """Exact differential of the kernel energy; also returns functionals.

    Fills gphi, gpsi with dF/dphi_k, dF/dpsi_k (pole psi entries are
    written but are never used: the pole fiber radius is pinned).
    max_riem follows the same pole-adjacent exclusion as _functionals.
    """
    n = phi.shape[0]
    C = fa * hx
    ne = _edges(phi, psi, hx, is_sphere, S, R)

    vol = 0.0
    for j in range(n):
        vol += phi[j] * psi[j] ** 2
    vol *= C

    min_ds = 1e300
    for e in range(ne):
        ds = hx / R[e]
        if ds < min_ds:
            min_ds = ds

    jlo = 1 if is_sphere else 0
    jhi = n - 1 if is_sphere else n
    fsum = 0.0
    max_riem = 0.0
    min_psi = 1e300
    for j in range(n):
        gam[j] = 0.0
        bet[j] = 0.0
        gphi[j] = 0.0
        gpsi[j] = 0.0
    for j in range(jlo, jhi):
        el = j - 1 if j > 0 else ne - 1
        pl = R[el] * S[el]
        pr = R[j] * S[j]
        u = (pr - pl) / (hx * phi[j])
        pj = psi[j]
        if pj < min_psi:
            min_psi = pj
        pole_adj = is_sphere and (j == 1 or j == n - 2)
        if pole_adj:
            dens = 6.0 * u * u
            riem = 0.0
            gam[j] = 12.0 * C * nf * phi[j] * u
        else:
            v = 0.5 * (pl + pr)
            q = ks - v * v
            dens = 4.0 * u * u + 2.0 * (q / pj) ** 2
            riem = (4.0 * u * u + 2.0 * (q * q) / (pj * pj)) / (pj * pj)
            gam[j] = 8.0 * C * nf * phi[j] * u
            bet[j] = -8.0 * C * nf * phi[j] * q * v / (pj * pj)
            gpsi[j] = -4.0 * C * nf * phi[j] * q * q / (pj * pj * pj)
        fsum += phi[j] * dens
        if riem > max_riem:
            max_riem = riem
        gphi[j] = C * nf * dens - gam[j] * u / phi[j]

    for e in range(ne):
        f = e + 1 if e + 1 < n else 0
        lam[e] = (
            gam[e] / (hx * phi[e])
            - gam[f] / (hx * phi[f])
            + 0.5 * (bet[e] + bet[f])
        )

    for k in range(n):
        el = k - 1 if k > 0 else ne - 1
        has_left = (not is_sphere) or k > 0
        has_right = (not is_sphere) or k < n - 1
        if has_left:
            gpsi[k] += lam[el] * R[el] / hx
            gphi[k] -= 0.5 * lam[el] * S[el] * R[el] * R[el]
        if has_right:
            gpsi[k] -= lam[k] * R[k] / hx
            gphi[k] -= 0.5 * lam[k] * S[k] * R[k] * R[k]
    return C * nf * fsum, vol, nf * max_riem, min_ds, min_psi


@njit(cache=True)
def _riesz(phi, psi, hx, fa, is_sphere, gphi, gpsi):
    """Divide the differential by the diagonal tangent masses, in place.

    Sphere pole gauge entries are slaved: the neighbor's gradient picks up
    the pole partial scaled by the current ratio, the pole copies the
    neighbor's velocity scaled the same way, and the pole fiber velocity
    is pinned to zero. Returns a status (0 ok, STATUS_SINGULAR_MASS).
    """
    n = phi.shape[0]
    C = fa * hx
    jlo = 1 if is_sphere else 0
    jhi = n - 1 if is_sphere else n
    r_l = 1.0
    r_r = 1.0
    if is_sphere:
        r_l = phi[0] / phi[1]
        r_r = phi[n - 1] / phi[n - 2]
        gphi[1] += r_l * gphi[0]
        gphi[n - 2] += r_r * gphi[n - 1]
    for j in range(jlo, jhi):
        mphi = 4.0 * C * psi[j] ** 2 / phi[j]
        mpsi = 8.0 * C * phi[j]
        if mphi < MASS_FLOOR or mpsi < MASS_FLOOR:
            return STATUS_SINGULAR_MASS
        gphi[j] /= mphi
        gpsi[j] /= mpsi
    if is_sphere:
        gphi[0] = r_l * gphi[1]
        gphi[n - 1] = r_r * gphi[n - 2]
        gpsi[0] = 0.0
        gpsi[n - 1] = 0.0
    return 0


@njit(cache=True)
def _velocity(
    phi, psi, hx, fa, ks, nf, is_sphere, normalized, S, R, gam, bet, lam, vphi, vpsi
):
    """Flow velocity -G (minus the volume-normalizing term when asked).

    Returns (F, vol, max_riem, min_ds, min_psi, status) of the input state.
    """
    F, vol, max_riem, min_ds, min_psi = _gradient(
        phi, psi, hx, fa, ks, nf, is_sphere, S, R, gam, bet, lam, vphi, vpsi
    )
    status = _riesz(phi, psi, hx, fa, is_sphere, vphi, vpsi)
    if status != 0:
        return F, vol, max_riem, min_ds, min_psi, status
    n = phi.shape[0]
    if normalized:
        coef = F / (6.0 * vol)
        for j in range(n):
            vphi[j] = -vphi[j] - coef * 0.5 * phi[j]
            vpsi[j] = -vpsi[j] - coef * 0.5 * psi[j]
        if is_sphere:
            vpsi[0] = 0.0
            vpsi[n - 1] = 0.0
    else:
        for j in range(n):
            vphi[j] = -vphi[j]
            vpsi[j] = -vpsi[j]
    return F, vol, max_riem, min_ds, min_psi, 0


@njit(cache=True)
def _trial_ok(phi, psi, is_sphere):
    n = phi.shape[0]
    jlo = 1 if is_sphere else 0
    jhi = n - 1 if is_sphere else n
    for j in range(n):
        if not (phi[j] > 0.0) or not np.isfinite(phi[j]) or not np.isfinite(psi[j]):
            return False
    for j in range(jlo, jhi):
        if not (psi[j] > 0.0):
            return False
    return True


@njit(cache=True)
def _advance(
    phi,
    psi,
    hx,
    fa,
    ks,
    nf,
    is_sphere,
    normalized,
    rk2,
    energy_guard,
    dt_safety,
    t,
    t_end,
    riem_ceiling,
    psi_floor,
    max_steps,
    work,
):
    """Advance up to max_steps accepted steps in place.

    work is a (12, n) scratch block. Returns (t, steps_done, status,
    last_dt): status CHUNK_DONE means max_steps accepted and more to do,
    anything else is a stop condition diagnosed on the current state.
    """
    S = work[0]
    R = work[1]
    gam = work[2]
    bet = work[3]
    lam = work[4]
    vphi = work[5]
    vpsi = work[6]
    tphi = work[7]
    tpsi = work[8]
    mphi = work[9]
    mpsi = work[10]
    n = phi.shape[0]
    steps = 0
    last_dt = 0.0
    while steps < max_steps:
        F, vol, max_riem, min_ds, min_psi, status = _velocity(
            phi, psi, hx, fa, ks, nf, is_sphere, normalized, S, R, gam, bet, lam, vphi, vpsi
        )
        if min_psi < psi_floor:
            return t, steps, STATUS_PSI_FLOOR, last_dt
        if max_riem > riem_ceiling:
            return t, steps, STATUS_RIEM_CEILING, last_dt
        if status != 0:
            return t, steps, status, last_dt
        if t >= t_end or t_end - t < DT_FLOOR:
            return t, steps, STATUS_REACHED_END, last_dt

        dt = dt_safety * min_ds**4 / max(1.0, max_riem)
        if dt > t_end - t:
            dt = t_end - t
        while True:
            if dt < DT_FLOOR:
                return t, steps, STATUS_DT_UNDERFLOW, last_dt
            if rk2:
                for j in range(n):
                    mphi[j] = phi[j] + 0.5 * dt * vphi[j]
                    mpsi[j] = psi[j] + 0.5 * dt * vpsi[j]
                if not _trial_ok(mphi, mpsi, is_sphere):
                    dt *= 0.5
                    continue
                _, _, _, _, mid_min_psi, mstat = _velocity(
                    mphi, mpsi, hx, fa, ks, nf, is_sphere, normalized,
                    S, R, gam, bet, lam, tphi, tpsi,
                )
                if mstat != 0 or mid_min_psi <= 0.0:
                    dt *= 0.5
                    continue
                for j in range(n):
                    tphi[j] = phi[j] + dt * tphi[j]
                    tpsi[j] = psi[j] + dt * tpsi[j]
            else:
                for j in range(n):
                    tphi[j] = phi[j] + dt * vphi[j]
                    tpsi[j] = psi[j] + dt * vpsi[j]
            if not _trial_ok(tphi, tpsi, is_sphere):
                dt *= 0.5
                continue
            if energy_guard or normalized:
                F_new, vol_new, _, _, _ = _functionals(
                    tphi, tpsi, hx, fa, ks, nf, is_sphere, S, R
                )
                if not np.isfinite(F_new):
                    dt *= 0.5
                    continue
                if normalized:
                    if abs(vol_new - vol) > VOL_GUARD_REL * vol:
                        dt *= 0.5
                        continue
                elif energy_guard and F_new > F:
                    dt *= 0.5
                    continue
            break
        for j in range(n):
            phi[j] = tphi[j]
            psi[j] = tpsi[j]
        t += dt
        last_dt = dt
        steps += 1
    return t, steps, STATUS_CHUNK_DONE, last_dt


def make_work(n: int) -> np.ndarray:
    """Scratch block for _advance / _velocity calls."""
    return np.zeros((12, n))
