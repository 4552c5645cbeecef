"""Numba stencil kernels for the Yee update with CPML corrections.

Arrays are C-ordered ``(nx, ny, nz)``. Tangential E on the outermost planes and
the outermost H layer are never updated (PEC behind the absorbing layer).
Loops run in a fixed order, so results do not depend on scheduling.
"""
import numba as nb

_jit = nb.njit(cache=True, fastmath=False, boundscheck=False)


@_jit
def update_h(ex, ey, ez, hx, hy, hz, c, psi_hxz, psi_hyz, bz, az, klo, khi):
    """H update fused with the z-normal CPML correction.

    The z slabs are ``k < klo`` and ``k >= khi``; their psi planes are stored
    at ``k`` and ``klo + k - khi``. Doing them per (i, j) row while the row is
    still in cache avoids a second strided pass over the arrays.
    """
    nx, ny, nz = ex.shape
    for i in range(nx - 1):
        for j in range(ny - 1):
            for k in range(nz - 1):
                hx[i, j, k] -= c * ((ez[i, j + 1, k] - ez[i, j, k]) - (ey[i, j, k + 1] - ey[i, j, k]))
                hy[i, j, k] -= c * ((ex[i, j, k + 1] - ex[i, j, k]) - (ez[i + 1, j, k] - ez[i, j, k]))
                hz[i, j, k] -= c * ((ey[i + 1, j, k] - ey[i, j, k]) - (ex[i, j + 1, k] - ex[i, j, k]))
            for k in range(klo):
                psi_hxz[i, j, k] = bz[k] * psi_hxz[i, j, k] + az[k] * (ey[i, j, k + 1] - ey[i, j, k])
                hx[i, j, k] += c * psi_hxz[i, j, k]
                psi_hyz[i, j, k] = bz[k] * psi_hyz[i, j, k] + az[k] * (ex[i, j, k + 1] - ex[i, j, k])
                hy[i, j, k] -= c * psi_hyz[i, j, k]
            for k in range(khi, nz - 1):
                s = klo + k - khi
                psi_hxz[i, j, s] = bz[k] * psi_hxz[i, j, s] + az[k] * (ey[i, j, k + 1] - ey[i, j, k])
                hx[i, j, k] += c * psi_hxz[i, j, s]
                psi_hyz[i, j, s] = bz[k] * psi_hyz[i, j, s] + az[k] * (ex[i, j, k + 1] - ex[i, j, k])
                hy[i, j, k] -= c * psi_hyz[i, j, s]


@_jit
def update_e(ex, ey, ez, hx, hy, hz, cex, cey, cez, psi_exz, psi_eyz, bz, az, klo, khi):
    """E update fused with the z-normal CPML correction; ``c*`` hold dt/(eps*dx)."""
    nx, ny, nz = ex.shape
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                ex[i, j, k] += cex[i, j, k] * ((hz[i, j, k] - hz[i, j - 1, k]) - (hy[i, j, k] - hy[i, j, k - 1]))
                ey[i, j, k] += cey[i, j, k] * ((hx[i, j, k] - hx[i, j, k - 1]) - (hz[i, j, k] - hz[i - 1, j, k]))
                ez[i, j, k] += cez[i, j, k] * ((hy[i, j, k] - hy[i - 1, j, k]) - (hx[i, j, k] - hx[i, j - 1, k]))
            for k in range(1, klo):
                psi_exz[i, j, k] = bz[k] * psi_exz[i, j, k] + az[k] * (hy[i, j, k] - hy[i, j, k - 1])
                ex[i, j, k] -= cex[i, j, k] * psi_exz[i, j, k]
                psi_eyz[i, j, k] = bz[k] * psi_eyz[i, j, k] + az[k] * (hx[i, j, k] - hx[i, j, k - 1])
                ey[i, j, k] += cey[i, j, k] * psi_eyz[i, j, k]
            for k in range(khi, nz - 1):
                s = klo + k - khi
                psi_exz[i, j, s] = bz[k] * psi_exz[i, j, s] + az[k] * (hy[i, j, k] - hy[i, j, k - 1])
                ex[i, j, k] -= cex[i, j, k] * psi_exz[i, j, s]
                psi_eyz[i, j, s] = bz[k] * psi_eyz[i, j, s] + az[k] * (hx[i, j, k] - hx[i, j, k - 1])
                ey[i, j, k] += cey[i, j, k] * psi_eyz[i, j, s]


# CPML corrections. ``slab`` lists the grid indices along the stretched axis
# that lie in the layer; psi arrays store only those planes. ``b``/``a`` are
# dimensionless per-index recursion coefficients; psi carries field
# differences and is scaled by the same dt/dx (H) or dt/(eps dx) (E) factor
# as the main update.

@_jit
def cpml_h_x(ey, ez, hy, hz, psi_hyx, psi_hzx, slab, b, a, c):
    nx, ny, nz = ey.shape
    for s in range(slab.shape[0]):
        i = slab[s]
        if i >= nx - 1:
            continue
        bi = b[i]
        ai = a[i]
        for j in range(ny - 1):
            for k in range(nz - 1):
                psi_hyx[s, j, k] = bi * psi_hyx[s, j, k] + ai * (ez[i + 1, j, k] - ez[i, j, k])
                hy[i, j, k] += c * psi_hyx[s, j, k]
                psi_hzx[s, j, k] = bi * psi_hzx[s, j, k] + ai * (ey[i + 1, j, k] - ey[i, j, k])
                hz[i, j, k] -= c * psi_hzx[s, j, k]


@_jit
def cpml_h_y(ex, ez, hx, hz, psi_hxy, psi_hzy, slab, b, a, c):
    nx, ny, nz = ex.shape
    for i in range(nx - 1):
        for s in range(slab.shape[0]):
            j = slab[s]
            if j >= ny - 1:
                continue
            bj = b[j]
            aj = a[j]
            for k in range(nz - 1):
                psi_hxy[i, s, k] = bj * psi_hxy[i, s, k] + aj * (ez[i, j + 1, k] - ez[i, j, k])
                hx[i, j, k] -= c * psi_hxy[i, s, k]
                psi_hzy[i, s, k] = bj * psi_hzy[i, s, k] + aj * (ex[i, j + 1, k] - ex[i, j, k])
                hz[i, j, k] += c * psi_hzy[i, s, k]


@_jit
def cpml_e_x(hy, hz, ey, ez, psi_eyx, psi_ezx, slab, b, a, cey, cez):
    nx, ny, nz = ey.shape
    for s in range(slab.shape[0]):
        i = slab[s]
        if i < 1 or i >= nx - 1:
            continue
        bi = b[i]
        ai = a[i]
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                psi_eyx[s, j, k] = bi * psi_eyx[s, j, k] + ai * (hz[i, j, k] - hz[i - 1, j, k])
                ey[i, j, k] -= cey[i, j, k] * psi_eyx[s, j, k]
                psi_ezx[s, j, k] = bi * psi_ezx[s, j, k] + ai * (hy[i, j, k] - hy[i - 1, j, k])
                ez[i, j, k] += cez[i, j, k] * psi_ezx[s, j, k]


@_jit
def cpml_e_y(hx, hz, ex, ez, psi_exy, psi_ezy, slab, b, a, cex, cez):
    nx, ny, nz = ex.shape
    for i in range(1, nx - 1):
        for s in range(slab.shape[0]):
            j = slab[s]
            if j < 1 or j >= ny - 1:
                continue
            bj = b[j]
            aj = a[j]
            for k in range(1, nz - 1):
                psi_exy[i, s, k] = bj * psi_exy[i, s, k] + aj * (hz[i, j, k] - hz[i, j - 1, k])
                ex[i, j, k] += cex[i, j, k] * psi_exy[i, s, k]
                psi_ezy[i, s, k] = bj * psi_ezy[i, s, k] + aj * (hx[i, j, k] - hx[i, j - 1, k])
                ez[i, j, k] -= cez[i, j, k] * psi_ezy[i, s, k]


@_jit
def inject(field, idx, amp, coef):
    """Soft current source: ``E -= dt/eps * J`` at listed nodes."""
    for n in range(idx.shape[0]):
        i, j, k = idx[n, 0], idx[n, 1], idx[n, 2]
        field[i, j, k] -= coef[i, j, k] * amp[n]


@_jit
def accumulate_plane(acc_re, acc_im, f, axis, index, lo0, lo1, wr, wi, scale):
    """acc += scale * f[plane] * (wr + i wi) over a rectangular patch."""
    n0, n1 = acc_re.shape
    for p in range(n0):
        for q in range(n1):
            if axis == 0:
                v = f[index, lo0 + p, lo1 + q]
            elif axis == 1:
                v = f[lo0 + p, index, lo1 + q]
            else:
                v = f[lo0 + p, lo1 + q, index]
            v *= scale
            acc_re[p, q] += v * wr
            acc_im[p, q] += v * wi
