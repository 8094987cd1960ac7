"""Compiled grid kernels shared by the sensor, mapping and cost modules.

Cells are addressed as ``(row, col)``; continuous coordinates passed to the
line walkers are in *cell units* with ``x`` along columns and ``y`` along rows.
"""

import heapq
import math

import numpy as np
from numba import njit

_EPS = 1e-9

# 8-neighbourhood, cardinal moves first.
NBR_DR = np.array([-1, 1, 0, 0, -1, -1, 1, 1], dtype=np.int64)
NBR_DC = np.array([0, 0, -1, 1, -1, 1, -1, 1], dtype=np.int64)


@njit(cache=True)
def dijkstra(trav, src_r, src_c, resolution, stop_r, stop_c, stop_margin):
    """Multi-source 8-connected Dijkstra over ``trav``.

    Diagonal moves require both adjacent cardinal cells to be traversable.
    When ``stop_r >= 0`` the search ends once popped distances exceed the stop
    cell's distance by more than ``stop_margin``; cells settled up to that
    point carry exact values.
    """
    h, w = trav.shape
    dist = np.full((h, w), np.inf)
    done = np.zeros((h, w), dtype=np.bool_)
    # step counts along the best path; distances are computed from them so a
    # value never depends on the order its steps were summed in
    n_straight = np.zeros((h, w), dtype=np.int64)
    n_diag = np.zeros((h, w), dtype=np.int64)
    sqrt2 = math.sqrt(2.0)
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for k in range(src_r.shape[0]):
        r = src_r[k]
        c = src_c[k]
        if dist[r, c] > 0.0:
            dist[r, c] = 0.0
            heapq.heappush(heap, (0.0, np.int64(r * w + c)))
    limit = np.inf
    while len(heap) > 0:
        d, idx = heapq.heappop(heap)
        r = idx // w
        c = idx - r * w
        if done[r, c]:
            continue
        if d > limit:
            break
        done[r, c] = True
        if r == stop_r and c == stop_c:
            limit = d + stop_margin
        for k in range(8):
            nr = r + NBR_DR[k]
            nc = c + NBR_DC[k]
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            if not trav[nr, nc] or done[nr, nc]:
                continue
            s = n_straight[r, c]
            g = n_diag[r, c]
            if k >= 4:
                if not trav[r, nc] or not trav[nr, c]:
                    continue
                g += 1
            else:
                s += 1
            nd = (s + g * sqrt2) * resolution
            if nd < dist[nr, nc]:
                dist[nr, nc] = nd
                n_straight[nr, nc] = s
                n_diag[nr, nc] = g
                heapq.heappush(heap, (nd, np.int64(nr * w + nc)))
    # unsettled tentative values are upper bounds only
    if stop_r >= 0:
        for r in range(h):
            for c in range(w):
                if not done[r, c]:
                    dist[r, c] = np.inf
    return dist


@njit(cache=True)
def segment_cells(x0, y0, x1, y1, out_r, out_c):
    """Cells whose interior the segment (x0, y0)-(x1, y1) passes through.

    Writes into ``out_r``/``out_c`` and returns the count. A segment crossing
    exactly through a cell corner steps diagonally and does not visit the two
    cells it only touches.
    """
    cx = math.floor(x0 + _EPS)
    cy = math.floor(y0 + _EPS)
    dx = x1 - x0
    dy = y1 - y0
    n = 0
    out_r[n] = cy
    out_c[n] = cx
    n += 1
    if abs(dx) < _EPS and abs(dy) < _EPS:
        return n
    if dx > _EPS:
        sx = 1
        tdx = 1.0 / dx
        tmx = (cx + 1 - x0) * tdx
    elif dx < -_EPS:
        sx = -1
        tdx = -1.0 / dx
        tmx = (x0 - cx) * tdx
    else:
        sx = 0
        tdx = np.inf
        tmx = np.inf
    if dy > _EPS:
        sy = 1
        tdy = 1.0 / dy
        tmy = (cy + 1 - y0) * tdy
    elif dy < -_EPS:
        sy = -1
        tdy = -1.0 / dy
        tmy = (y0 - cy) * tdy
    else:
        sy = 0
        tdy = np.inf
        tmy = np.inf
    cap = out_r.shape[0]
    while n < cap:
        t = min(tmx, tmy)
        if t >= 1.0 - _EPS:
            break
        if abs(tmx - tmy) < _EPS:
            cx += sx
            cy += sy
            tmx += tdx
            tmy += tdy
        elif tmx < tmy:
            cx += sx
            tmx += tdx
        else:
            cy += sy
            tmy += tdy
        out_r[n] = cy
        out_c[n] = cx
        n += 1
    return n


@njit(cache=True)
def segment_clear(blocked, x0, y0, x1, y1, skip_last):
    """True when no cell the segment passes through is ``blocked``.

    Out-of-bounds cells count as blocked.
    """
    h, w = blocked.shape
    cap = int(abs(x1 - x0) + abs(y1 - y0)) + 4
    rr = np.empty(cap, dtype=np.int64)
    cc = np.empty(cap, dtype=np.int64)
    n = segment_cells(x0, y0, x1, y1, rr, cc)
    if skip_last:
        n -= 1
    for i in range(n):
        r = rr[i]
        c = cc[i]
        if r < 0 or r >= h or c < 0 or c >= w or blocked[r, c]:
            return False
    return True


@njit(cache=True)
def raycast(occupied, x0, y0, heading, fov, max_range, n_rays):
    """Reveal cells seen from (x0, y0) in cell units.

    Returns ``(rows, cols)`` of revealed cells. Each ray stops at the first
    occupied cell (which is revealed). A free cell is revealed only when the
    segment from the origin to its centre crosses no occupied cell.
    """
    h, w = occupied.shape
    status = np.zeros((h, w), dtype=np.int8)
    out_r = np.empty(h * w, dtype=np.int64)
    out_c = np.empty(h * w, dtype=np.int64)
    n_out = 0
    reach = max_range + 2.0
    cap = int(2 * reach) + 4
    rr = np.empty(cap, dtype=np.int64)
    cc = np.empty(cap, dtype=np.int64)
    r2 = max_range * max_range
    for k in range(n_rays):
        if n_rays > 1:
            ang = heading - 0.5 * fov + fov * k / (n_rays - 1)
        else:
            ang = heading
        x1 = x0 + reach * math.cos(ang)
        y1 = y0 + reach * math.sin(ang)
        m = segment_cells(x0, y0, x1, y1, rr, cc)
        for i in range(m):
            r = rr[i]
            c = cc[i]
            if r < 0 or r >= h or c < 0 or c >= w:
                break
            ddx = c + 0.5 - x0
            ddy = r + 0.5 - y0
            inside = ddx * ddx + ddy * ddy <= r2 + _EPS
            if occupied[r, c]:
                if inside and status[r, c] == 0:
                    status[r, c] = 1
                    out_r[n_out] = r
                    out_c[n_out] = c
                    n_out += 1
                break
            if not inside:
                # cells entered past the range cap end the ray
                if ddx * ddx + ddy * ddy > (max_range + 1.0) ** 2:
                    break
                continue
            if status[r, c] != 0:
                continue
            if segment_clear(occupied, x0, y0, c + 0.5, r + 0.5, True):
                status[r, c] = 1
                out_r[n_out] = r
                out_c[n_out] = c
                n_out += 1
            else:
                status[r, c] = 2
    return out_r[:n_out].copy(), out_c[:n_out].copy()
