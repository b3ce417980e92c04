"""Standalone SVG scatter plots with optional density level-set contours.

No plotting dependency: points become ``<circle>`` elements and level sets
become closed ``<polyline>`` elements extracted from a density grid by
marching squares. Output is deterministic for identical inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["marching_squares", "render_scatter"]

# Edge ids within a grid cell: 0 bottom, 1 right, 2 top, 3 left.
_SEGMENTS = {
    0: [],
    1: [(3, 0)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(2, 3)],
    9: [(0, 2)],
    11: [(1, 2)],
    12: [(3, 1)],
    13: [(0, 1)],
    14: [(3, 0)],
    15: [],
}


def _edge_point(edge, x0, x1, y0, y1, v00, v10, v11, v01, level):
    def lerp(pa, pb, va, vb):
        t = 0.5 if vb == va else (level - va) / (vb - va)
        return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))

    if edge == 0:
        return lerp((x0, y0), (x1, y0), v00, v10)
    if edge == 1:
        return lerp((x1, y0), (x1, y1), v10, v11)
    if edge == 2:
        return lerp((x0, y1), (x1, y1), v01, v11)
    return lerp((x0, y0), (x0, y1), v00, v01)


def marching_squares(xs, ys, values, level) -> list[list[tuple[float, float]]]:
    """Iso-contours of ``values`` (indexed [i, j] ~ (xs[i], ys[j])) at ``level``.

    Returns polylines as coordinate lists; contours that close inside the
    grid have their first point repeated at the end.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    segments: list[tuple[tuple[float, float], tuple[float, float]]] = []
    above = values > level
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            v00, v10 = values[i, j], values[i + 1, j]
            v11, v01 = values[i + 1, j + 1], values[i, j + 1]
            case = (
                int(above[i, j])
                | int(above[i + 1, j]) << 1
                | int(above[i + 1, j + 1]) << 2
                | int(above[i, j + 1]) << 3
            )
            if case in (5, 10):
                # Saddle cell: disambiguate with the centre value.
                center_above = 0.25 * (v00 + v10 + v11 + v01) > level
                if case == 5:
                    pairs = [(0, 1), (3, 2)] if center_above else [(3, 0), (2, 1)]
                else:
                    pairs = [(3, 0), (2, 1)] if center_above else [(0, 1), (3, 2)]
            else:
                pairs = _SEGMENTS[case]
            for ea, eb in pairs:
                args = (xs[i], xs[i + 1], ys[j], ys[j + 1], v00, v10, v11, v01, level)
                segments.append((_edge_point(ea, *args), _edge_point(eb, *args)))
    return _chain_segments(segments)


def _key(point):
    return (round(point[0], 9), round(point[1], 9))


def _chain_segments(segments) -> list[list[tuple[float, float]]]:
    """Join undirected segments into polylines by matching endpoints."""
    adjacency: dict[tuple[float, float], list[int]] = {}
    for idx, (a, b) in enumerate(segments):
        adjacency.setdefault(_key(a), []).append(idx)
        adjacency.setdefault(_key(b), []).append(idx)
    used = [False] * len(segments)
    loops = []
    for start in range(len(segments)):
        if used[start]:
            continue
        used[start] = True
        a, b = segments[start]
        path = [a, b]
        for _ in range(2):  # extend forward, then (if open) backward
            while True:
                tip = _key(path[-1])
                nxt = next((i for i in adjacency.get(tip, []) if not used[i]), None)
                if nxt is None:
                    break
                used[nxt] = True
                p, q = segments[nxt]
                path.append(q if _key(p) == tip else p)
                if _key(path[-1]) == _key(path[0]):
                    break
            if _key(path[-1]) == _key(path[0]):
                break
            path.reverse()
        loops.append(path)
    return loops


def _fmt(v: float) -> str:
    return format(v, ".2f")


def render_scatter(
    samples: np.ndarray,
    target_samples: np.ndarray | None = None,
    contours: list[list[tuple[float, float]]] | None = None,
    size: int = 640,
    margin: int = 40,
) -> str:
    """SVG document: sample scatter plus optional target overlay and level set."""
    geometry = [np.asarray(samples, dtype=np.float64)]
    if target_samples is not None and len(target_samples):
        geometry.append(np.asarray(target_samples, dtype=np.float64))
    if contours:
        geometry.extend(np.asarray(loop) for loop in contours if len(loop))
    stacked = np.vstack(geometry)
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    scale = (size - 2 * margin) / span

    def to_px(p):
        x = margin + (p[0] - lo[0]) * scale
        y = size - margin - (p[1] - lo[1]) * scale
        return x, y

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if contours:
        out.append('<g class="levelset" fill="none" stroke="#8d4fa8" stroke-width="1.5">')
        for loop in contours:
            pts = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in map(to_px, loop))
            out.append(f'<polyline points="{pts}"/>')
        out.append("</g>")
    if target_samples is not None and len(target_samples):
        out.append('<g class="target-samples" fill="#3f9b5f" fill-opacity="0.5">')
        for p in target_samples:
            px, py = to_px(p)
            out.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="2"/>')
        out.append("</g>")
    out.append('<g class="samples" fill="#3c6fb0" fill-opacity="0.6">')
    for p in np.asarray(samples, dtype=np.float64):
        px, py = to_px(p)
        out.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="2"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
