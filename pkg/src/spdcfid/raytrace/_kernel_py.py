"""Vectorised numpy tracing kernel; reference implementation and fallback for the Cython one.

Rays are columns (z, x, dz, dx, lam_um, pol_h, t, start, status) modified in
place. The loop runs over surfaces; every surface is applied to all live rays
whose ``start`` index has been reached.
"""

from __future__ import annotations

import numpy as np

from ..dispersion import C_MM_PER_FS
from .system import (
    ALIVE,
    ASPHERE,
    DEAD_APERTURE,
    DEAD_MISS,
    DEAD_TIR,
    PLANE,
    UNIAXIAL_KIND,
    SurfaceTable,
)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
E_INDEX_ITER = 30


def _sellmeier(coef, lam):
    a, b, c, e = coef
    l2 = lam * lam
    n = np.sqrt(a + b / (l2 - c) + e * l2)
    dn = (-2.0 * lam * b / (l2 - c) ** 2 + 2.0 * e * lam) / (2.0 * n)
    return n, dn


def _cos_to_axis(tab: SurfaceTable, j: int, dz, dx):
    th = tab.m_axis[j]
    if tab.m_horizontal[j]:
        return np.cos(th) * dz + np.sin(th) * dx
    return np.cos(th) * dz


def is_extraordinary(tab: SurfaceTable, j: int, pol_h):
    if tab.m_kind[j] != UNIAXIAL_KIND:
        return np.zeros_like(pol_h, dtype=bool)
    return pol_h if tab.m_horizontal[j] else ~pol_h


def medium_index(tab: SurfaceTable, j: int, lam, is_e, dz, dx, group: bool = False):
    """Phase (or group) index seen by each ray in medium ``j``."""
    if tab.m_kind[j] == 0:
        return np.ones_like(lam)
    n_o, d_o = _sellmeier(tab.m_so[j], lam)
    if tab.m_kind[j] != UNIAXIAL_KIND:
        return n_o - lam * d_o if group else n_o
    n_e, d_e = _sellmeier(tab.m_se[j], lam)
    c2 = _cos_to_axis(tab, j, dz, dx) ** 2
    s2 = 1.0 - c2
    n_eff = 1.0 / np.sqrt(c2 / n_o**2 + s2 / n_e**2)
    if group:
        d_eff = n_eff**3 * (c2 * d_o / n_o**3 + s2 * d_e / n_e**3)
        n_eff = n_eff - lam * d_eff
        n_o = n_o - lam * d_o
    return np.where(is_e, n_eff, n_o)


def walkoff_shift(tab: SurfaceTable, j: int, lam, is_e, dz, dx, length):
    """Signed x displacement of extraordinary rays in a horizontal-axis medium."""
    if tab.m_kind[j] != UNIAXIAL_KIND or not tab.m_horizontal[j]:
        return np.zeros_like(lam)
    n_o, _ = _sellmeier(tab.m_so[j], lam)
    n_e, _ = _sellmeier(tab.m_se[j], lam)
    th = tab.m_axis[j]
    cos_t = np.cos(th) * dz + np.sin(th) * dx
    sin_t = np.sin(th) * dz - np.cos(th) * dx
    n_eff2 = 1.0 / (cos_t**2 / n_o**2 + sin_t**2 / n_e**2)
    rho = 0.5 * length * n_eff2 * (1.0 / n_o**2 - 1.0 / n_e**2) * 2.0 * sin_t * cos_t
    return np.where(is_e, rho, 0.0)


def _sag_and_slope(tab: SurfaceTable, k: int, x):
    c = tab.curvature[k]
    r2 = x * x
    arg = 1.0 - (1.0 + tab.conic[k]) * c * c * r2
    bad = arg < 0
    root = np.sqrt(np.where(bad, 1.0, arg))
    sag = c * r2 / (1.0 + root)
    slope = c * x / root
    for m in range(tab.coeffs.shape[1]):
        a = tab.coeffs[k, m]
        if a != 0.0:
            p = 2 * (m + 2)
            sag = sag + a * x**p
            slope = slope + p * a * x ** (p - 1)
    return sag, slope, bad


def _intersect(tab: SurfaceTable, k: int, z0, x0, dz, dx):
    """Path length to surface k and a miss flag."""
    d0 = z0 - tab.z[k]
    kind = tab.kind[k]
    miss = dz <= 0
    safe_dz = np.where(miss, 1.0, dz)
    if kind == PLANE:
        s = -d0 / safe_dz
    elif kind != ASPHERE:
        c = tab.curvature[k]
        b = dz - c * (d0 * dz + x0 * dx)
        f = c * (d0 * d0 + x0 * x0) - 2.0 * d0
        disc = b * b - c * f
        miss |= (disc < 0) | (b <= 0)
        s = f / np.where(miss, 1.0, b + np.sqrt(np.maximum(disc, 0.0)))
    else:
        s = -d0 / safe_dz
        todo = ~miss
        for _ in range(NEWTON_MAX_ITER):
            if not todo.any():
                break
            x = x0 + s * dx
            sag, slope, bad = _sag_and_slope(tab, k, x)
            miss |= todo & bad
            todo &= ~bad
            step = (d0 + s * dz - sag) / (dz - slope * dx)
            s = np.where(todo, s - step, s)
            todo &= np.abs(step) >= NEWTON_TOL
        miss |= todo  # not converged
    miss |= s < 0
    return s, miss


def _normal(tab: SurfaceTable, k: int, x):
    if tab.kind[k] == PLANE:
        return -np.ones_like(x), np.zeros_like(x)
    _, slope, _ = _sag_and_slope(tab, k, x)
    norm = np.sqrt(1.0 + slope * slope)
    return -1.0 / norm, slope / norm


def _refract(dz, dx, nz, nx, u):
    c = dz * nz + dx * nx
    disc = c * c + (u * u - 1.0)
    tir = disc < 0
    root = np.sqrt(np.where(tir, 0.0, disc))
    sgn = np.where(c < 0, -1.0, 1.0)
    g = sgn * root - c
    oz = (dz + nz * g) / u
    ox = (dx + nx * g) / u
    # keep |d| = 1 to machine precision
    norm = np.hypot(oz, ox)
    return oz / norm, ox / norm, tir


def trace_arrays(tab: SurfaceTable, z, x, dz, dx, lam, pol_h, t, start, status,
                 group: bool = False, vertices=None) -> None:
    """Propagate rays through every surface and on to the collection plane.

    ``vertices`` (optional, shape (n, n_surf + 2, 2)) receives the hit points:
    entry 0 is the starting point, entry k + 1 surface k, the last entry the
    collection plane. Unreached entries are left untouched.
    """
    n_surf = len(tab.z)
    if vertices is not None:
        vertices[:, 0, 0] = z
        vertices[:, 0, 1] = x
    for k in range(n_surf + 1):
        idx = np.flatnonzero((status == ALIVE) & (start <= k))
        if idx.size == 0:
            continue
        mb = int(tab.medium_after[k - 1]) if k > 0 else 0
        z0, x0, dz0, dx0, li, ph = z[idx], x[idx], dz[idx], dx[idx], lam[idx], pol_h[idx]
        e_b = is_extraordinary(tab, mb, ph)

        if k == n_surf:
            miss = dz0 <= 0
            s = (tab.plane_z - z0) / np.where(miss, 1.0, dz0)
            miss |= s < 0
        else:
            s, miss = _intersect(tab, k, z0, x0, dz0, dx0)
        zn = z0 + s * dz0
        xn = x0 + s * dx0 + walkoff_shift(tab, mb, li, e_b, dz0, dx0, zn - z0)
        n_t = medium_index(tab, mb, li, e_b, dz0, dx0, group)
        tn = t[idx] + n_t * s / C_MM_PER_FS

        st = np.where(miss, DEAD_MISS, ALIVE)
        if k < n_surf:
            st = np.where((st == ALIVE) & (np.abs(xn) > tab.aperture[k]), DEAD_APERTURE, st)
        ok = st == ALIVE
        z[idx] = np.where(ok, zn, z0)
        x[idx] = np.where(ok, xn, x0)
        t[idx] = np.where(ok, tn, t[idx])
        if vertices is not None:
            vertices[idx[ok], k + 1, 0] = zn[ok]
            vertices[idx[ok], k + 1, 1] = xn[ok]

        if k < n_surf:
            ma = int(tab.medium_after[k])
            nz, nx = _normal(tab, k, np.where(ok, xn, 0.0))
            n1 = medium_index(tab, mb, li, e_b, dz0, dx0)
            e_a = is_extraordinary(tab, ma, ph)
            n2 = medium_index(tab, ma, li, e_a, dz0, dx0)
            oz, ox, tir = _refract(dz0, dx0, nz, nx, n2 / n1)
            # extraordinary index depends on the refracted direction; iterate
            # per ray so a ray's result never depends on its batch neighbours
            todo = e_a & ~tir
            for _ in range(E_INDEX_ITER):
                if not todo.any():
                    break
                n2_new = medium_index(tab, ma, li, e_a, oz, ox)
                rz, rx, rtir = _refract(dz0, dx0, nz, nx, n2_new / n1)
                oz = np.where(todo, rz, oz)
                ox = np.where(todo, rx, ox)
                tir = np.where(todo, rtir, tir)
                todo &= (np.abs(n2_new - n2) > 1e-15) & ~rtir
                n2 = np.where(todo, n2_new, n2)
            st = np.where(ok & tir, DEAD_TIR, st)
            ok = st == ALIVE
            dz[idx] = np.where(ok, oz, dz0)
            dx[idx] = np.where(ok, ox, dx0)
        status[idx] = st
