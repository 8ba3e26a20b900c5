"""Vector reflection/refraction and single-surface intersection for 2D rays.

Vectors are (z, x) pairs; numpy arrays of shape (..., 2) are accepted.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import RaySurfaceMiss, TotalInternalReflection
from .system import PLANE, SPHERE, Ray, Surface

NEWTON_TOL_MM = 1e-10
NEWTON_MAX_ITER = 50


def _dot(a, b):
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def reflect(a, n):
    """a - 2 (a.n / n.n) n"""
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    nn = _dot(n, n)
    if np.any(nn == 0):
        raise ValueError("surface normal must be non-zero")
    return a - 2.0 * (_dot(a, n) / nn)[..., None] * n


def refract(a, n, u):
    """Refract unit direction ``a`` at a surface with normal ``n``.

    ``u`` is n_dest / n_src. Either normal orientation gives the same result.
    Raises TotalInternalReflection when no transmitted ray exists.
    """
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("index ratio must be positive")
    nn = np.sqrt(_dot(n, n))
    if np.any(nn == 0):
        raise ValueError("surface normal must be non-zero")
    nhat = n / nn[..., None]
    c = _dot(a, nhat)
    disc = c * c + _dot(a, a) * (u * u - 1.0)
    if np.any(disc < 0):
        raise TotalInternalReflection("total internal reflection: sin(theta_in) exceeds the index ratio")
    # sign(0) would drop the root at normal incidence; treat it as +1
    sgn = np.where(c < 0, -1.0, 1.0)
    return (a + nhat * (sgn * np.sqrt(disc) - c)[..., None]) / u[..., None]


def sag_slope(surface: Surface, x):
    """d(sag)/dx."""
    x = np.asarray(x, dtype=float)
    if surface.kind == PLANE:
        return np.zeros_like(x)
    c = surface.curvature
    arg = 1.0 - (1.0 + surface.conic) * c * c * x * x
    d = c * x / np.sqrt(arg)
    for m, a in enumerate(surface.coeffs):
        p = 2 * (m + 2)
        d = d + p * a * x ** (p - 1)
    return d


def surface_normal(surface: Surface, x):
    """Unit normal at height x, oriented towards -z."""
    s = sag_slope(surface, x)
    norm = np.sqrt(1.0 + s * s)
    return np.stack([-1.0 / norm, s / norm], axis=-1)


def intersect(ray: Ray, surface: Surface):
    """Point where ``ray`` meets ``surface`` and the surface normal there.

    Closed form for planes and spheres, Newton iteration for conics and
    aspheres. Raises RaySurfaceMiss for no intersection or a hit outside
    the clear aperture.
    """
    z0, x0 = ray.position
    dz, dx = ray.direction
    if dz <= 0:
        raise RaySurfaceMiss("ray does not travel towards +z")
    d0 = z0 - surface.z
    if surface.kind == PLANE:
        s = -d0 / dz
    elif surface.kind == SPHERE and surface.conic == 0.0 and not surface.coeffs:
        c = surface.curvature
        b = dz - c * (d0 * dz + x0 * dx)
        f = c * (d0 * d0 + x0 * x0) - 2.0 * d0
        disc = b * b - c * f
        if disc < 0 or b <= 0:
            raise RaySurfaceMiss("ray misses the spherical surface")
        s = f / (b + math.sqrt(disc))
    else:
        s = -d0 / dz
        for _ in range(NEWTON_MAX_ITER):
            x = x0 + s * dx
            try:
                g = d0 + s * dz - float(surface.sag(x))
            except ValueError:
                raise RaySurfaceMiss("ray leaves the aspheric surface domain") from None
            step = g / (dz - float(sag_slope(surface, x)) * dx)
            s -= step
            if abs(step) < NEWTON_TOL_MM:
                break
        else:
            raise RaySurfaceMiss("asphere intersection did not converge")
    if s < 0:
        raise RaySurfaceMiss("surface lies behind the ray")
    z = z0 + s * dz
    x = x0 + s * dx
    if abs(x) > surface.aperture:
        raise RaySurfaceMiss(f"ray height {x:.6g} mm outside aperture {surface.aperture} mm")
    normal = surface_normal(surface, x)
    return (z, x), (float(normal[0]), float(normal[1]))
