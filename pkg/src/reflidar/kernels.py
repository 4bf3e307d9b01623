"""Hot inner loops, each with a numba loop form and a numpy form.

The ``*_loop`` functions are plain Python that numba compiles; the
``*_numpy`` functions are the vectorized fallback. Both produce identical
results. The public names at the bottom are bound per ``_accel.USE_NUMBA``.
"""

import numpy as np

from . import _accel


# z-buffer scatter -----------------------------------------------------------

def _zbuffer_loop(pix, rng, val, npix):
    depth = np.full(npix, np.inf)
    out = np.zeros(npix)
    for k in range(pix.shape[0]):
        p = pix[k]
        if rng[k] < depth[p]:
            depth[p] = rng[k]
            out[p] = val[k]
    return depth, out


def _zbuffer_numpy(pix, rng, val, npix):
    depth = np.full(npix, np.inf)
    out = np.zeros(npix)
    if pix.shape[0] == 0:
        return depth, out
    # sort by pixel, then range, then input order: first entry per pixel wins
    order = np.lexsort((np.arange(pix.shape[0]), rng, pix))
    sp = pix[order]
    first = np.empty(sp.shape[0], dtype=bool)
    first[0] = True
    first[1:] = sp[1:] != sp[:-1]
    chosen = order[first]
    depth[pix[chosen]] = rng[chosen]
    out[pix[chosen]] = val[chosen]
    return depth, out


# one fill pass --------------------------------------------------------------

def _insertion_sort(buf, n):
    for a in range(1, n):
        x = buf[a]
        b = a - 1
        while b >= 0 and buf[b] > x:
            buf[b + 1] = buf[b]
            b -= 1
        buf[b + 1] = x


if _accel.HAVE_NUMBA:
    # compiled whenever available so the loop kernels can call it in nopython mode
    _insertion_sort = _accel.jit(_insertion_sort)


def _fill_pass_loop(val, dep, mask, win, use_depth):
    """Fill invalid pixels from valid neighbours in a ``win`` x ``win`` window.

    Reads only the input grids; writes new ones. With ``use_depth`` the
    neighbour of smallest depth wins (first in raster order on ties);
    otherwise the median of neighbour values (mean of the two middle
    entries for even counts) is taken for intensity and depth separately.
    """
    h, w = mask.shape
    r = win // 2
    nv = val.copy()
    nd = dep.copy()
    nm = mask.copy()
    buf_v = np.empty(win * win)
    buf_d = np.empty(win * win)
    for i in range(h):
        for j in range(w):
            if mask[i, j]:
                continue
            cnt = 0
            best = np.inf
            bv = 0.0
            for a in range(max(0, i - r), min(h, i + r + 1)):
                for b in range(max(0, j - r), min(w, j + r + 1)):
                    if mask[a, b]:
                        if use_depth:
                            if dep[a, b] < best:
                                best = dep[a, b]
                                bv = val[a, b]
                        else:
                            buf_v[cnt] = val[a, b]
                            buf_d[cnt] = dep[a, b]
                        cnt += 1
            if cnt == 0:
                continue
            nm[i, j] = True
            if use_depth:
                nv[i, j] = bv
                nd[i, j] = best
            else:
                _insertion_sort(buf_v, cnt)
                _insertion_sort(buf_d, cnt)
                lo = (cnt - 1) // 2
                hi = cnt // 2
                nv[i, j] = 0.5 * (buf_v[lo] + buf_v[hi])
                nd[i, j] = 0.5 * (buf_d[lo] + buf_d[hi])
    return nv, nd, nm


def _box_count(mask, win):
    """Number of valid pixels in each ``win`` x ``win`` window (zero padded)."""
    h, w = mask.shape
    r = win // 2
    c = np.zeros((h + 2 * r + 1, w + 2 * r + 1), dtype=np.int64)
    c[r + 1 : r + 1 + h, r + 1 : r + 1 + w] = mask
    c = c.cumsum(axis=0).cumsum(axis=1)
    return c[win:, win:] - c[:-win, win:] - c[win:, :-win] + c[:-win, :-win]


def _gather(a, ii, jj, win, fill):
    """(win*win, n) neighbour values around (ii, jj) in raster window order."""
    h, w = a.shape
    r = win // 2
    pad = np.full((h + 2 * r, w + 2 * r), fill, dtype=a.dtype)
    pad[r : r + h, r : r + w] = a
    out = np.empty((win * win, ii.shape[0]), dtype=a.dtype)
    k = 0
    for da in range(win):
        for db in range(win):
            out[k] = pad[ii + da, jj + db]
            k += 1
    return out


_CHUNK = 16384


def _fill_pass_numpy(val, dep, mask, win, use_depth):
    nv = val.copy()
    nd = dep.copy()
    nm = mask.copy()
    target = ~mask & (_box_count(mask, win) > 0)
    ti, tj = np.nonzero(target)
    for s in range(0, ti.shape[0], _CHUNK):
        ii = ti[s : s + _CHUNK]
        jj = tj[s : s + _CHUNK]
        ms = _gather(mask, ii, jj, win, False)
        vs = _gather(val, ii, jj, win, 0.0)
        ds = _gather(dep, ii, jj, win, 0.0)
        cols = np.arange(ii.shape[0])
        if use_depth:
            k = np.argmin(np.where(ms, ds, np.inf), axis=0)  # first minimum = raster tie break
            nv[ii, jj] = vs[k, cols]
            nd[ii, jj] = ds[k, cols]
        else:
            c = ms.sum(axis=0)
            lo = (c - 1) // 2
            hi = c // 2
            sv = np.sort(np.where(ms, vs, np.inf), axis=0)
            sd = np.sort(np.where(ms, ds, np.inf), axis=0)
            nv[ii, jj] = 0.5 * (sv[lo, cols] + sv[hi, cols])
            nd[ii, jj] = 0.5 * (sd[lo, cols] + sd[hi, cols])
    nm[ti, tj] = True
    return nv, nd, nm


# edge-aware smoothing -------------------------------------------------------

_DOMAIN = np.exp(-0.5 * np.array([[2.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 2.0]]))


def _smooth_loop(val, mask, target, sigma_r, domain):
    """3x3 bilateral smoothing of ``target`` pixels over valid neighbours."""
    h, w = mask.shape
    out = val.copy()
    inv = -0.5 / (sigma_r * sigma_r)
    for i in range(h):
        for j in range(w):
            if not target[i, j]:
                continue
            c = val[i, j]
            acc = 0.0
            wsum = 0.0
            for a in range(-1, 2):
                for b in range(-1, 2):
                    p = i + a
                    q = j + b
                    if p < 0 or p >= h or q < 0 or q >= w or not mask[p, q]:
                        continue
                    d = val[p, q] - c
                    wt = domain[a + 1, b + 1] * np.exp(d * d * inv)
                    acc += wt * val[p, q]
                    wsum += wt
            out[i, j] = acc / wsum
    return out


def _smooth_numpy(val, mask, target, sigma_r, domain):
    out = val.copy()
    if not target.any():
        return out
    ii, jj = np.nonzero(target)
    vs = _gather(val, ii, jj, 3, 0.0)
    ms = _gather(mask, ii, jj, 3, False)
    c = val[ii, jj]
    d = vs - c
    inv = -0.5 / (sigma_r * sigma_r)
    wt = np.where(ms, domain.reshape(9, 1) * np.exp(d * d * inv), 0.0)
    acc = np.zeros(ii.shape[0])
    wsum = np.zeros(ii.shape[0])
    # accumulate in raster order to match the loop form
    for k in range(9):
        acc += wt[k] * vs[k]
        wsum += wt[k]
    out[ii, jj] = acc / wsum
    return out


# surface normals -------------------------------------------------------------

def _normals_loop(depth, mask, rays):
    """Central-difference normals where the full 3x3 neighbourhood is valid.

    ``rays`` are unit pixel-center directions (H, W, 3). Normals face the sensor.
    """
    h, w = mask.shape
    normals = np.zeros((h, w, 3))
    nmask = np.zeros((h, w), dtype=np.bool_)
    cos = np.zeros((h, w))
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            ok = True
            for a in range(i - 1, i + 2):
                for b in range(j - 1, j + 2):
                    if not mask[a, b]:
                        ok = False
            if not ok:
                continue
            ux = rays[i, j + 1, 0] * depth[i, j + 1] - rays[i, j - 1, 0] * depth[i, j - 1]
            uy = rays[i, j + 1, 1] * depth[i, j + 1] - rays[i, j - 1, 1] * depth[i, j - 1]
            uz = rays[i, j + 1, 2] * depth[i, j + 1] - rays[i, j - 1, 2] * depth[i, j - 1]
            vx = rays[i + 1, j, 0] * depth[i + 1, j] - rays[i - 1, j, 0] * depth[i - 1, j]
            vy = rays[i + 1, j, 1] * depth[i + 1, j] - rays[i - 1, j, 1] * depth[i - 1, j]
            vz = rays[i + 1, j, 2] * depth[i + 1, j] - rays[i - 1, j, 2] * depth[i - 1, j]
            nx = uy * vz - uz * vy
            ny = uz * vx - ux * vz
            nz = ux * vy - uy * vx
            norm = np.sqrt(nx * nx + ny * ny + nz * nz)
            if not norm > 0:
                continue
            nx /= norm
            ny /= norm
            nz /= norm
            dot = nx * rays[i, j, 0] + ny * rays[i, j, 1] + nz * rays[i, j, 2]
            if dot > 0:
                nx, ny, nz = -nx, -ny, -nz
            normals[i, j, 0] = nx
            normals[i, j, 1] = ny
            normals[i, j, 2] = nz
            nmask[i, j] = True
            cos[i, j] = abs(dot)
    return normals, nmask, cos


def _normals_numpy(depth, mask, rays):
    h, w = mask.shape
    normals = np.zeros((h, w, 3))
    nmask = np.zeros((h, w), dtype=bool)
    cos = np.zeros((h, w))
    if h < 3 or w < 3:
        return normals, nmask, cos
    pts = rays * depth[..., None]
    full = np.ones((h - 2, w - 2), dtype=bool)
    for di in range(3):
        for dj in range(3):
            full &= mask[di : di + h - 2, dj : dj + w - 2]
    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(du, dv)
    norm = np.sqrt(n[..., 0] * n[..., 0] + n[..., 1] * n[..., 1] + n[..., 2] * n[..., 2])
    full &= norm > 0
    n = np.where(full[..., None], n, 0.0) / np.where(full, norm, 1.0)[..., None]
    ray = rays[1:-1, 1:-1]
    dot = n[..., 0] * ray[..., 0] + n[..., 1] * ray[..., 1] + n[..., 2] * ray[..., 2]
    flip = dot > 0
    n = np.where(flip[..., None], -n, n)
    normals[1:-1, 1:-1] = n
    nmask[1:-1, 1:-1] = full
    cos[1:-1, 1:-1] = np.where(full, np.abs(dot), 0.0)
    return normals, nmask, cos


zbuffer = _accel.pick(_zbuffer_loop, _zbuffer_numpy)
fill_pass = _accel.pick(_fill_pass_loop, _fill_pass_numpy)
smooth = _accel.pick(_smooth_loop, _smooth_numpy)
normals = _accel.pick(_normals_loop, _normals_numpy)
