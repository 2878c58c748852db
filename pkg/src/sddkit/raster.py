"""Barycentric triangle rasterization over pixel/texel centers.

One engine serves both screen-space rendering (with a z-buffer) and
UV-space rasterization (tension maps, normal maps, region masks).

Conventions (y grows downward, as in images and UV charts):
  * pixel (ix, iy) is sampled at center (ix + 0.5, iy + 0.5);
  * coverage uses half-plane tests with a top-left rule on exact
    boundaries, so triangles sharing an edge partition its pixels;
  * with depths, the larger depth wins (camera looks down -z); exact
    depth ties keep the smaller triangle index.
"""

from __future__ import annotations

import numpy as np


def _cross2(ax, ay, bx, by):
    return ax * by - ay * bx


def _is_top_left(dx, dy):
    # top edge: horizontal, interior below (dx > 0 in our winding);
    # left edge: goes up (dy < 0). Complementary under direction flip.
    return (dy == 0.0 and dx > 0.0) or dy < 0.0


def rasterize_attributes(points, tris, attrs, width, height, depths=None):
    """Fill triangles over a width x height grid of pixel centers.

    Parameters
    ----------
    points : (V, 2) float array, pixel coordinates.
    tris : (F, 3) int array.
    attrs : (V, C) float array interpolated barycentrically.
    depths : optional (V,) float array; enables z-buffering where the
        larger interpolated depth wins. Without depths the first
        triangle to claim a pixel keeps it.

    Returns
    -------
    values : (H, W, C) interpolated attributes (0 where uncovered).
    coverage : (H, W) bool.
    depth : (H, W) float (-inf where uncovered); None when depths is None.
    claims : (H, W) int16, number of triangles whose coverage test
        passed at that pixel (wins or not).
    """
    pts = np.asarray(points, dtype=np.float64)
    attrs = np.asarray(attrs, dtype=np.float64)
    if attrs.ndim == 1:
        attrs = attrs[:, None]
    n_ch = attrs.shape[1]
    values = np.zeros((height, width, n_ch))
    coverage = np.zeros((height, width), dtype=bool)
    claims = np.zeros((height, width), dtype=np.int16)
    depth_buf = None
    if depths is not None:
        depths = np.asarray(depths, dtype=np.float64)
        depth_buf = np.full((height, width), -np.inf)

    for f in range(len(tris)):
        ia, ib, ic = (int(v) for v in tris[f])
        ax, ay = pts[ia]
        bx, by = pts[ib]
        cx, cy = pts[ic]
        area2 = _cross2(bx - ax, by - ay, cx - ax, cy - ay)
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            ib, ic = ic, ib
            (bx, by), (cx, cy) = (cx, cy), (bx, by)
            area2 = -area2

        x_lo = max(int(np.ceil(min(ax, bx, cx) - 0.5)), 0)
        x_hi = min(int(np.floor(max(ax, bx, cx) - 0.5)), width - 1)
        y_lo = max(int(np.ceil(min(ay, by, cy) - 0.5)), 0)
        y_hi = min(int(np.floor(max(ay, by, cy) - 0.5)), height - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue

        px = np.arange(x_lo, x_hi + 1) + 0.5
        py = (np.arange(y_lo, y_hi + 1) + 0.5)[:, None]

        # edge functions opposite each vertex; all >= 0 inside
        ea = _cross2(cx - bx, cy - by, px - bx, py - by)
        eb = _cross2(ax - cx, ay - cy, px - cx, py - cy)
        ec = _cross2(bx - ax, by - ay, px - ax, py - ay)
        inside = (
            ((ea > 0.0) | ((ea == 0.0) & _is_top_left(cx - bx, cy - by)))
            & ((eb > 0.0) | ((eb == 0.0) & _is_top_left(ax - cx, ay - cy)))
            & ((ec > 0.0) | ((ec == 0.0) & _is_top_left(bx - ax, by - ay)))
        )
        if not inside.any():
            continue

        rows, cols = np.nonzero(inside)
        yy = rows + y_lo
        xx = cols + x_lo
        claims[yy, xx] += 1

        wa = ea[rows, cols] / area2
        wb = eb[rows, cols] / area2
        wc = ec[rows, cols] / area2

        if depth_buf is None:
            free = ~coverage[yy, xx]
            if not free.any():
                continue
            yy, xx = yy[free], xx[free]
            wa, wb, wc = wa[free], wb[free], wc[free]
        else:
            d = wa * depths[ia] + wb * depths[ib] + wc * depths[ic]
            win = d > depth_buf[yy, xx]
            if not win.any():
                continue
            yy, xx = yy[win], xx[win]
            wa, wb, wc = wa[win], wb[win], wc[win]
            depth_buf[yy, xx] = d[win]

        coverage[yy, xx] = True
        values[yy, xx] = (
            wa[:, None] * attrs[ia] + wb[:, None] * attrs[ib] + wc[:, None] * attrs[ic]
        )

    return values, coverage, depth_buf, claims


def rasterize_uv_attribute(uv, tris, attrs, width, height):
    """Rasterize per-vertex attributes into UV space.

    UV (0,0) maps to the top-left corner; texel (i, j) center sits at
    ((i+0.5)/W, (j+0.5)/H). Returns (values, coverage); overlap counting
    is available via rasterize_uv_claims.
    """
    pts = np.asarray(uv, dtype=np.float64) * np.array([width, height], dtype=np.float64)
    values, coverage, _, _ = rasterize_attributes(pts, tris, attrs, width, height)
    return values, coverage


def rasterize_uv_claims(uv, tris, attrs, width, height):
    """Like rasterize_uv_attribute but also returns the per-texel claim count."""
    pts = np.asarray(uv, dtype=np.float64) * np.array([width, height], dtype=np.float64)
    values, coverage, _, claims = rasterize_attributes(pts, tris, attrs, width, height)
    return values, coverage, claims


def dilate(values, coverage, passes=2):
    """Grow covered texels into uncovered neighbors (4-neighborhood mean).

    Guards bilinear sampling near chart boundaries. Deterministic: each
    pass reads only the previous pass's coverage state.
    """
    vals = values.copy()
    cov = coverage.copy()
    for _ in range(passes):
        if cov.all():
            break
        acc = np.zeros_like(vals)
        cnt = np.zeros(cov.shape, dtype=np.int64)
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            shifted_cov = np.zeros_like(cov)
            shifted_val = np.zeros_like(vals)
            src_y = slice(max(dy, 0), cov.shape[0] + min(dy, 0))
            dst_y = slice(max(-dy, 0), cov.shape[0] + min(-dy, 0))
            src_x = slice(max(dx, 0), cov.shape[1] + min(dx, 0))
            dst_x = slice(max(-dx, 0), cov.shape[1] + min(-dx, 0))
            shifted_cov[dst_y, dst_x] = cov[src_y, src_x]
            shifted_val[dst_y, dst_x] = vals[src_y, src_x]
            take = shifted_cov & ~cov
            acc[take] += shifted_val[take]
            cnt[take] += 1
        new = cnt > 0
        vals[new] = acc[new] / cnt[new][:, None]
        cov = cov | new
    return vals, cov
