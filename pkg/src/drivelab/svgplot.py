"""Tiny SVG writer so figures need no plotting dependency.

World coordinates map to a square canvas with y up; every drawing call
appends shapes, save() writes the document.
"""

from __future__ import annotations

import numpy as np


class SvgCanvas:
    def __init__(self, world_bounds, size: int = 640, margin: int = 20, background: str = "white"):
        xmin, ymin, xmax, ymax = world_bounds
        span = max(xmax - xmin, ymax - ymin, 1e-9)
        self.scale = (size - 2 * margin) / span
        self.x0, self.y0 = xmin, ymin
        self.size = size
        self.margin = margin
        self.shapes: list[str] = [
            f'<rect width="{size}" height="{size}" fill="{background}"/>'
        ]

    def _px(self, point) -> tuple[float, float]:
        x = self.margin + (point[0] - self.x0) * self.scale
        y = self.size - self.margin - (point[1] - self.y0) * self.scale
        return x, y

    def polyline(self, points, color: str = "black", width: float = 1.0, opacity: float = 1.0):
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (self._px(p) for p in np.asarray(points)))
        self.shapes.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" stroke-opacity="{opacity}"/>'
        )

    def circle(self, center, radius_world: float, color: str = "black", width: float = 1.0, fill: str = "none"):
        cx, cy = self._px(center)
        self.shapes.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{radius_world * self.scale:.2f}" '
            f'fill="{fill}" stroke="{color}" stroke-width="{width}"/>'
        )

    def dot(self, point, color: str = "black", r: float = 2.0):
        cx, cy = self._px(point)
        self.shapes.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r}" fill="{color}"/>')

    def text(self, point, label: str, size: int = 14, color: str = "black"):
        x, y = self._px(point)
        self.shapes.append(f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" fill="{color}">{label}</text>')

    def to_string(self) -> str:
        body = "\n".join(self.shapes)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.size}" height="{self.size}">\n'
            f"{body}\n</svg>\n"
        )

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_string())


def plot_ring_rollouts(path, radius: float, trajectories, title: str = "", lane_points=None):
    """Overhead overlay of many closed-loop trajectories on the ring road."""
    bound = radius * 1.4
    canvas = SvgCanvas((-bound, -bound, bound, bound))
    canvas.circle((0, 0), radius, color="#bbbbbb", width=6)
    if lane_points is not None:
        for p in np.asarray(lane_points):
            canvas.dot(p, color="#dddddd", r=1.0)
    for traj in trajectories:
        canvas.polyline(np.asarray(traj)[:, :2], color="#d62728", width=1.0, opacity=0.35)
    if title:
        canvas.text((-bound * 0.95, bound * 0.9), title)
    canvas.save(path)


def plot_plan_overlay(path, targets, plan, title: str = ""):
    """Targets vs the smoothed plan, for the LQR demo."""
    pts = np.vstack([np.asarray(targets)[:, :2], np.asarray(plan)[:, :2]])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.1 * max(float(np.max(hi - lo)), 1.0)
    canvas = SvgCanvas((lo[0] - pad, lo[1] - pad, hi[0] + pad, hi[1] + pad))
    canvas.polyline(np.asarray(targets)[:, :2], color="#1f77b4", width=1.5, opacity=0.9)
    for p in np.asarray(targets)[:, :2]:
        canvas.dot(p, color="#1f77b4", r=2.5)
    canvas.polyline(np.asarray(plan)[:, :2], color="#d62728", width=2.0)
    if title:
        canvas.text((lo[0], hi[1]), title)
    canvas.save(path)


def plot_bar_chart(path, labels, values, title: str = ""):
    """Minimal vertical bar chart for metric summaries."""
    n = max(len(labels), 1)
    vmax = max(max(values, default=0.0), 1e-9)
    canvas = SvgCanvas((0.0, 0.0, float(n), vmax * 1.2))
    for i, (label, v) in enumerate(zip(labels, values)):
        x0, y0 = canvas._px((i + 0.15, 0.0))
        x1, y1 = canvas._px((i + 0.85, v))
        canvas.shapes.append(
            f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{x1 - x0:.2f}" height="{y0 - y1:.2f}" fill="#1f77b4"/>'
        )
        canvas.text((i + 0.2, vmax * 1.1), f"{label}: {v:.3g}", size=12)
    if title:
        canvas.text((0.05, vmax * 1.18), title)
    canvas.save(path)
