"""Static BEV frame rendering: one SVG per frame, rectangles colored by
track ID so the same track keeps the same color across frames."""

from __future__ import annotations

import hashlib
import math
from pathlib import Path
from typing import Mapping, Sequence

SVG_SIZE = 640
MARGIN = 40


def track_color(track_id: str) -> str:
    """Deterministic color from the track ID (stable across processes)."""
    digest = hashlib.md5(str(track_id).encode()).hexdigest()
    hue = int(digest[:4], 16) % 360
    return f"hsl({hue},70%,45%)"


def _frame_records(frames: Sequence[dict], frame_index: int) -> list[dict]:
    for frame in frames:
        if frame.get("frame_index") == frame_index:
            return list(frame.get("results", frame.get("detections", [])))
    return []


def _bounds(records: Sequence[dict]) -> tuple[float, float, float, float]:
    if not records:
        return (-10.0, -10.0, 10.0, 10.0)
    xs = [float(r["translation"][0]) for r in records]
    ys = [float(r["translation"][1]) for r in records]
    pad = 10.0
    return min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad


def render_frame_svg(
    records: Sequence[dict], title: str, detections: Sequence[dict] = ()
) -> str:
    """BEV frame as SVG text: axes plus one rotated rectangle per track.

    Raw detections, when given, are drawn underneath as grey outlines.
    """
    xmin, ymin, xmax, ymax = _bounds(list(records) + list(detections))
    span = max(xmax - xmin, ymax - ymin)
    scale = (SVG_SIZE - 2 * MARGIN) / span

    def sx(x: float) -> float:
        return MARGIN + (x - xmin) * scale

    def sy(y: float) -> float:
        return SVG_SIZE - MARGIN - (y - ymin) * scale  # y up

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
        f'<text x="{MARGIN}" y="{MARGIN - 16}" font-family="monospace" font-size="14">{title}</text>',
        # axes
        f'<line x1="{MARGIN}" y1="{SVG_SIZE - MARGIN}" x2="{SVG_SIZE - MARGIN}" '
        f'y2="{SVG_SIZE - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{SVG_SIZE - MARGIN}" stroke="black"/>',
        f'<text x="{SVG_SIZE - MARGIN}" y="{SVG_SIZE - MARGIN + 20}" font-family="monospace" '
        f'font-size="12" text-anchor="end">x [m]</text>',
        f'<text x="{MARGIN - 24}" y="{MARGIN}" font-family="monospace" font-size="12">y [m]</text>',
    ]
    for rec in detections:
        x, y = float(rec["translation"][0]), float(rec["translation"][1])
        l, w = float(rec["size"][0]), float(rec["size"][1])
        yaw = float(rec.get("rotation_yaw", rec.get("rotation", 0.0)))
        cx, cy = sx(x), sy(y)
        pl, pw = l * scale, w * scale
        deg = -math.degrees(yaw)
        parts.append(
            f'<g transform="translate({cx:.2f},{cy:.2f}) rotate({deg:.2f})">'
            f'<rect x="{-pl / 2:.2f}" y="{-pw / 2:.2f}" width="{pl:.2f}" height="{pw:.2f}" '
            f'fill="none" stroke="grey" stroke-dasharray="3,2"/></g>'
        )
    for rec in records:
        x, y = float(rec["translation"][0]), float(rec["translation"][1])
        l, w = float(rec["size"][0]), float(rec["size"][1])
        yaw = float(rec.get("rotation", 0.0))
        color = track_color(rec["tracking_id"])
        cx, cy = sx(x), sy(y)
        pl, pw = l * scale, w * scale
        deg = -math.degrees(yaw)  # SVG y points down
        parts.append(
            f'<g transform="translate({cx:.2f},{cy:.2f}) rotate({deg:.2f})">'
            f'<rect x="{-pl / 2:.2f}" y="{-pw / 2:.2f}" width="{pl:.2f}" height="{pw:.2f}" '
            f'fill="{color}" fill-opacity="0.55" stroke="{color}"/>'
            f'<line x1="0" y1="0" x2="{pl / 2:.2f}" y2="0" stroke="{color}" stroke-width="2"/>'
            "</g>"
        )
        parts.append(
            f'<text x="{cx + 4:.2f}" y="{cy - 4:.2f}" font-family="monospace" font-size="10">'
            f'{rec["tracking_id"]}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plots(
    results_by_scene: Mapping[str, Sequence[dict]],
    frames: Sequence[int],
    out_dir,
    detections_by_scene: Mapping[str, Sequence[dict]] | None = None,
) -> list[Path]:
    """Write one SVG per requested (scene, frame); returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for scene in sorted(results_by_scene):
        for frame_index in frames:
            records = _frame_records(results_by_scene[scene], frame_index)
            dets = ()
            if detections_by_scene and scene in detections_by_scene:
                dets = _frame_records(detections_by_scene[scene], frame_index)
            svg = render_frame_svg(records, f"{scene} frame {frame_index}", dets)
            path = out_dir / f"{scene}_frame{frame_index:04d}.svg"
            path.write_text(svg)
            written.append(path)
    return written
