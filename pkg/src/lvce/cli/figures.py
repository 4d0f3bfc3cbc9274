"""Dependency-free figure output: SVG box and line plots, binary PGM panels.

Every SVG carries its plotted numbers in an XML comment so figures can be
audited without re-running the study.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import InvalidArgumentError

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3")


def box_stats(values) -> dict:
    """Quartiles (linear interpolation), Tukey whiskers and outliers."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise InvalidArgumentError("box_stats needs at least one value")
    q1, med, q3 = (float(x) for x in np.percentile(v, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return {
        "n": int(v.size), "min": float(v[0]), "q1": q1, "median": med, "q3": q3, "max": float(v[-1]),
        "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
        "outliers": [float(x) for x in v if x < lo_fence or x > hi_fence],
    }


class _Axis:
    def __init__(self, lo: float, hi: float, px_lo: float, px_hi: float):
        if hi == lo:
            pad = abs(lo) * 0.05 or 1.0
            lo, hi = lo - pad, hi + pad
        self.lo, self.hi, self.px_lo, self.px_hi = lo, hi, px_lo, px_hi

    def __call__(self, v: float) -> float:
        return self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)

    def ticks(self, n: int = 5) -> list[float]:
        return list(np.linspace(self.lo, self.hi, n))


def _svg(width: int, height: int, body: list[str], data) -> str:
    comment = json.dumps(data, sort_keys=True).replace("--", "- -")
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f"<!-- data: {comment} -->",
        f'<rect width="{width}" height="{height}" fill="white"/>',
        *body,
        "</svg>",
        "",
    ])


def _yaxis(ax: _Axis, x0: float, x1: float, label: str) -> list[str]:
    out = [f'<line x1="{x0}" y1="{ax.px_lo:.2f}" x2="{x0}" y2="{ax.px_hi:.2f}" stroke="black"/>']
    for t in ax.ticks():
        y = ax(t)
        out.append(f'<line x1="{x0 - 4}" y1="{y:.2f}" x2="{x1}" y2="{y:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{x0 - 6}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{t:.4g}</text>')
    mid = (ax.px_lo + ax.px_hi) / 2
    out.append(f'<text x="14" y="{mid:.2f}" font-size="12" transform="rotate(-90 14 {mid:.2f})" '
               f'text-anchor="middle">{label}</text>')
    return out


def boxplot_svg(groups: Mapping[str, Sequence[float]], title: str, ylabel: str, path) -> Path:
    stats = {k: box_stats(v) for k, v in groups.items()}
    width, height, left, right, top, bottom = 480, 360, 70, 20, 40, 50
    lo = min(s["min"] for s in stats.values())
    hi = max(s["max"] for s in stats.values())
    pad = (hi - lo) * 0.05
    ax = _Axis(lo - pad, hi + pad, height - bottom, top)
    body = [f'<text x="{width / 2}" y="22" font-size="14" text-anchor="middle">{title}</text>']
    body += _yaxis(ax, left, width - right, ylabel)
    slot = (width - left - right) / max(len(stats), 1)
    for i, (name, s) in enumerate(stats.items()):
        cx = left + slot * (i + 0.5)
        half = slot * 0.25
        color = PALETTE[i % len(PALETTE)]
        body += [
            f'<line x1="{cx:.2f}" y1="{ax(s["whisker_low"]):.2f}" x2="{cx:.2f}" y2="{ax(s["q1"]):.2f}" stroke="black"/>',
            f'<line x1="{cx:.2f}" y1="{ax(s["q3"]):.2f}" x2="{cx:.2f}" y2="{ax(s["whisker_high"]):.2f}" stroke="black"/>',
            f'<rect x="{cx - half:.2f}" y="{ax(s["q3"]):.2f}" width="{2 * half:.2f}" '
            f'height="{max(ax(s["q1"]) - ax(s["q3"]), 0.5):.2f}" fill="{color}" fill-opacity="0.6" stroke="black"/>',
            f'<line x1="{cx - half:.2f}" y1="{ax(s["median"]):.2f}" x2="{cx + half:.2f}" y2="{ax(s["median"]):.2f}" '
            f'stroke="black" stroke-width="2"/>',
        ]
        for w in ("whisker_low", "whisker_high"):
            body.append(f'<line x1="{cx - half / 2:.2f}" y1="{ax(s[w]):.2f}" x2="{cx + half / 2:.2f}" '
                        f'y2="{ax(s[w]):.2f}" stroke="black"/>')
        for o in s["outliers"]:
            body.append(f'<circle cx="{cx:.2f}" cy="{ax(o):.2f}" r="3" fill="none" stroke="black"/>')
        body.append(f'<text x="{cx:.2f}" y="{height - bottom + 18}" font-size="12" text-anchor="middle">{name}</text>')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_svg(width, height, body, {"title": title, "boxes": stats}))
    return path


def lineplot_svg(series: Mapping[str, dict], title: str, xlabel: str, ylabel: str, path) -> Path:
    """``series[name] = {"x": [...], "y": [...], "err": [...], "fit": (slope, intercept) | None}``."""
    width, height, left, right, top, bottom = 520, 360, 70, 130, 40, 50
    xs = [x for s in series.values() for x in s["x"]]
    lows = [y - e for s in series.values() for y, e in zip(s["y"], s.get("err") or [0] * len(s["y"]))]
    highs = [y + e for s in series.values() for y, e in zip(s["y"], s.get("err") or [0] * len(s["y"]))]
    pad_y = (max(highs) - min(lows)) * 0.05
    ax_y = _Axis(min(lows) - pad_y, max(highs) + pad_y, height - bottom, top)
    pad_x = (max(xs) - min(xs)) * 0.05 or 0.01
    ax_x = _Axis(min(xs) - pad_x, max(xs) + pad_x, left, width - right)
    body = [f'<text x="{(width - right + left) / 2}" y="22" font-size="14" text-anchor="middle">{title}</text>']
    body += _yaxis(ax_y, left, width - right, ylabel)
    body.append(f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>')
    for t in sorted(set(xs)):
        body.append(f'<text x="{ax_x(t):.2f}" y="{height - bottom + 16}" font-size="11" text-anchor="middle">{t:g}</text>')
    body.append(f'<text x="{(left + width - right) / 2}" y="{height - 10}" font-size="12" text-anchor="middle">{xlabel}</text>')
    for i, (name, s) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = list(zip(s["x"], s["y"]))
        errs = s.get("err") or [0.0] * len(pts)
        for (x, y), e in zip(pts, errs):
            if e:
                body.append(f'<line x1="{ax_x(x):.2f}" y1="{ax_y(y - e):.2f}" x2="{ax_x(x):.2f}" '
                            f'y2="{ax_y(y + e):.2f}" stroke="{color}"/>')
            body.append(f'<circle cx="{ax_x(x):.2f}" cy="{ax_y(y):.2f}" r="3.5" fill="{color}"/>')
        fit = s.get("fit")
        if fit is not None:
            slope, intercept = fit
            x0, x1 = min(s["x"]), max(s["x"])
            body.append(f'<line x1="{ax_x(x0):.2f}" y1="{ax_y(slope * x0 + intercept):.2f}" x2="{ax_x(x1):.2f}" '
                        f'y2="{ax_y(slope * x1 + intercept):.2f}" stroke="{color}" stroke-dasharray="5,3"/>')
        ly = top + 16 * i + 8
        body.append(f'<rect x="{width - right + 10}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
        body.append(f'<text x="{width - right + 24}" y="{ly + 1}" font-size="11">{name}</text>')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_svg(width, height, body, {"title": title, "series": series}))
    return path


def to_uint8(img: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.clip(np.rint((img - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray, comment: str = "") -> Path:
    """Binary (P5) 8-bit PGM; ``img`` is indexed ``[row, column]``."""
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise InvalidArgumentError("PGM image must be a 2-D uint8 array")
    h, w = img.shape
    header = "P5\n" + (f"# {comment}\n" if comment else "") + f"{w} {h}\n255\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header.encode("ascii") + np.ascontiguousarray(img).tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise InvalidArgumentError("not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise InvalidArgumentError("only 8-bit PGM is supported")
    data = raw[pos + 1:pos + 1 + w * h]
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def slice_panel(pc, ld, pred, sd, z: int | None = None) -> tuple[np.ndarray, float]:
    """Mid-axial tiles ``[PC | LD | prediction | SD | |pred - SD|]`` side by side.

    Each tile is the ``z`` slice shown with rows along y and columns along x.
    Images use the [0, 1] range; the error tile is stretched to its own
    maximum, which is returned alongside the panel.
    """
    z = pc.shape[2] // 2 if z is None else z
    tiles = [a[:, :, z].T for a in (pc, ld, pred, sd)]
    err = np.abs(pred[:, :, z] - sd[:, :, z]).T
    emax = float(err.max())
    img = np.concatenate([to_uint8(t) for t in tiles] + [to_uint8(err, 0.0, emax if emax > 0 else 1.0)], axis=1)
    return img, emax
