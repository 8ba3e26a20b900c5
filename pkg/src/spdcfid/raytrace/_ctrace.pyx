# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-ray tracing kernel. Same physics and status codes as _kernel_py."""

from libc.math cimport sqrt, cos, sin, fabs, hypot

cdef int PLANE = 0
cdef int ASPHERE = 2
cdef int UNIAXIAL = 2
cdef int ALIVE = 0
cdef int DEAD_TIR = 1
cdef int DEAD_MISS = 2
cdef int DEAD_APERTURE = 3
cdef int NEWTON_MAX_ITER = 50
cdef double NEWTON_TOL = 1e-10
cdef int E_INDEX_ITER = 30
cdef double C_MM_PER_FS = 2.99792458e-4


cdef inline void sellmeier(const double[:, :] coef, Py_ssize_t j, double lam, double* n, double* dn) noexcept nogil:
    cdef double l2 = lam * lam
    cdef double den = l2 - coef[j, 2]
    n[0] = sqrt(coef[j, 0] + coef[j, 1] / den + coef[j, 3] * l2)
    dn[0] = (-2.0 * lam * coef[j, 1] / (den * den) + 2.0 * coef[j, 3] * lam) / (2.0 * n[0])


cdef inline bint is_e(const long long[:] m_kind, const long long[:] m_h, Py_ssize_t j, bint pol_h) noexcept nogil:
    if m_kind[j] != UNIAXIAL:
        return False
    return pol_h if m_h[j] else not pol_h


cdef double index_of(const long long[:] m_kind, const double[:, :] m_so, const double[:, :] m_se,
                     const long long[:] m_h, const double[:] m_axis, Py_ssize_t j, double lam,
                     bint e, double dz, double dx, bint group) noexcept nogil:
    cdef double n_o, d_o, n_e, d_e, ct, c2, s2, n_eff, d_eff
    if m_kind[j] == 0:
        return 1.0
    sellmeier(m_so, j, lam, &n_o, &d_o)
    if m_kind[j] != UNIAXIAL or not e:
        return n_o - lam * d_o if group else n_o
    sellmeier(m_se, j, lam, &n_e, &d_e)
    if m_h[j]:
        ct = cos(m_axis[j]) * dz + sin(m_axis[j]) * dx
    else:
        ct = cos(m_axis[j]) * dz
    c2 = ct * ct
    s2 = 1.0 - c2
    n_eff = 1.0 / sqrt(c2 / (n_o * n_o) + s2 / (n_e * n_e))
    if group:
        d_eff = n_eff * n_eff * n_eff * (c2 * d_o / (n_o * n_o * n_o) + s2 * d_e / (n_e * n_e * n_e))
        return n_eff - lam * d_eff
    return n_eff


cdef double walkoff(const long long[:] m_kind, const double[:, :] m_so, const double[:, :] m_se,
                    const long long[:] m_h, const double[:] m_axis, Py_ssize_t j, double lam,
                    bint e, double dz, double dx, double length) noexcept nogil:
    cdef double n_o, n_e, dummy, ct, st, n_eff2
    if not e or m_kind[j] != UNIAXIAL or not m_h[j]:
        return 0.0
    sellmeier(m_so, j, lam, &n_o, &dummy)
    sellmeier(m_se, j, lam, &n_e, &dummy)
    ct = cos(m_axis[j]) * dz + sin(m_axis[j]) * dx
    st = sin(m_axis[j]) * dz - cos(m_axis[j]) * dx
    n_eff2 = 1.0 / (ct * ct / (n_o * n_o) + st * st / (n_e * n_e))
    return 0.5 * length * n_eff2 * (1.0 / (n_o * n_o) - 1.0 / (n_e * n_e)) * 2.0 * st * ct


cdef inline bint sag_slope(const double[:] curv, const double[:] conic, const double[:, :] coeffs,
                           Py_ssize_t k, double x, double* sag, double* slope) noexcept nogil:
    cdef double c = curv[k]
    cdef double r2 = x * x
    cdef double arg = 1.0 - (1.0 + conic[k]) * c * c * r2
    cdef double root, a, xp
    cdef Py_ssize_t m
    cdef int p
    if arg < 0:
        return False
    root = sqrt(arg)
    sag[0] = c * r2 / (1.0 + root)
    slope[0] = c * x / root
    for m in range(coeffs.shape[1]):
        a = coeffs[k, m]
        if a != 0.0:
            p = 2 * (m + 2)
            xp = x ** (p - 1)
            sag[0] += a * xp * x
            slope[0] += p * a * xp
    return True


def trace_arrays_c(const double[:] sz, const long long[:] kind, const double[:] curv,
                   const double[:] conic, const double[:, :] coeffs, const double[:] aperture,
                   const long long[:] medium_after, const long long[:] m_kind,
                   const double[:, :] m_so, const double[:, :] m_se, const long long[:] m_h,
                   const double[:] m_axis, double plane_z,
                   double[:] z, double[:] x, double[:] dz, double[:] dx, const double[:] lam,
                   const unsigned char[:] pol_h, double[:] t, const long long[:] start,
                   long long[:] status, bint group, double[:, :, :] vertices, bint record):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t n_surf = sz.shape[0]
    cdef Py_ssize_t i, k, mb, ma
    cdef int it
    cdef double z0, x0, d0, s, b, f, disc, zn, xn, sag, slope, step, nz, nx, norm
    cdef double n1, n2, n2_new, u, c, g, oz, ox, rz, rx
    cdef bint ph, eb, ea, miss, tir
    with nogil:
        for i in range(n):
            if record:
                vertices[i, 0, 0] = z[i]
                vertices[i, 0, 1] = x[i]
            ph = pol_h[i] != 0
            for k in range(start[i], n_surf + 1):
                if status[i] != ALIVE:
                    break
                mb = medium_after[k - 1] if k > 0 else 0
                eb = is_e(m_kind, m_h, mb, ph)
                z0 = z[i]
                x0 = x[i]
                miss = dz[i] <= 0
                s = 0.0
                if not miss:
                    if k == n_surf:
                        s = (plane_z - z0) / dz[i]
                    else:
                        d0 = z0 - sz[k]
                        if kind[k] == PLANE:
                            s = -d0 / dz[i]
                        elif kind[k] != ASPHERE:
                            c = curv[k]
                            b = dz[i] - c * (d0 * dz[i] + x0 * dx[i])
                            f = c * (d0 * d0 + x0 * x0) - 2.0 * d0
                            disc = b * b - c * f
                            if disc < 0 or b <= 0:
                                miss = True
                            else:
                                s = f / (b + sqrt(disc))
                        else:
                            s = -d0 / dz[i]
                            miss = True
                            for it in range(NEWTON_MAX_ITER):
                                if not sag_slope(curv, conic, coeffs, k, x0 + s * dx[i], &sag, &slope):
                                    break
                                step = (d0 + s * dz[i] - sag) / (dz[i] - slope * dx[i])
                                s -= step
                                if fabs(step) < NEWTON_TOL:
                                    miss = False
                                    break
                    if s < 0:
                        miss = True
                if miss:
                    status[i] = DEAD_MISS
                    break
                zn = z0 + s * dz[i]
                xn = x0 + s * dx[i] + walkoff(m_kind, m_so, m_se, m_h, m_axis, mb, lam[i], eb,
                                              dz[i], dx[i], zn - z0)
                if k < n_surf and fabs(xn) > aperture[k]:
                    status[i] = DEAD_APERTURE
                    break
                t[i] += index_of(m_kind, m_so, m_se, m_h, m_axis, mb, lam[i], eb, dz[i], dx[i], group) * s / C_MM_PER_FS
                z[i] = zn
                x[i] = xn
                if record:
                    vertices[i, k + 1, 0] = zn
                    vertices[i, k + 1, 1] = xn
                if k == n_surf:
                    break

                # refraction into the medium after surface k
                ma = medium_after[k]
                if kind[k] == PLANE:
                    nz = -1.0
                    nx = 0.0
                else:
                    sag_slope(curv, conic, coeffs, k, xn, &sag, &slope)
                    norm = sqrt(1.0 + slope * slope)
                    nz = -1.0 / norm
                    nx = slope / norm
                ea = is_e(m_kind, m_h, ma, ph)
                n1 = index_of(m_kind, m_so, m_se, m_h, m_axis, mb, lam[i], eb, dz[i], dx[i], False)
                n2 = index_of(m_kind, m_so, m_se, m_h, m_axis, ma, lam[i], ea, dz[i], dx[i], False)
                tir = False
                oz = dz[i]
                ox = dx[i]
                for it in range(E_INDEX_ITER + 1):
                    u = n2 / n1
                    c = dz[i] * nz + dx[i] * nx
                    disc = c * c + (u * u - 1.0)
                    if disc < 0:
                        tir = True
                        break
                    g = (-sqrt(disc) if c < 0 else sqrt(disc)) - c
                    rz = (dz[i] + nz * g) / u
                    rx = (dx[i] + nx * g) / u
                    norm = hypot(rz, rx)
                    oz = rz / norm
                    ox = rx / norm
                    if not ea:
                        break
                    n2_new = index_of(m_kind, m_so, m_se, m_h, m_axis, ma, lam[i], ea, oz, ox, False)
                    if fabs(n2_new - n2) <= 1e-15:
                        break
                    n2 = n2_new
                if tir:
                    status[i] = DEAD_TIR
                    break
                dz[i] = oz
                dx[i] = ox
