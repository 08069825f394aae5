"""Radar (spider) rendering of a posterior profile as standalone SVG.

Six axes (K_TM, G, C_trab, Q_AH, F_u, EVP) show the patient's values as
ratios to a reference population's medians.  A ratio r is drawn at
radius R*r/(r+1), which maps the reference level (r=1) to the dashed
mid-radius hexagon and compresses extreme ratios smoothly into the
chart.  Individual Monte-Carlo draws appear as faint polylines behind
the solid posterior-median polygon.  Output is a pure function of its
inputs, so identical profiles render byte-identical files.
"""

from __future__ import annotations

import math

from .core import to_clinical
from .inference import PosteriorProfile, ReferencePopulation
from .validation import check_positive

__all__ = ["RADAR_PARAMETERS", "render_radar_svg"]

RADAR_PARAMETERS = ("k_tm", "g", "c_trab", "q_ah", "f_u", "evp")
AXIS_LABELS = {"k_tm": "K_TM", "g": "G", "c_trab": "C_trab",
               "q_ah": "Q_AH", "f_u": "F_u", "evp": "EVP"}

_SIZE = 480.0
_CENTER = _SIZE / 2.0
_RADIUS = 180.0


def _vertex(index: int, radius: float) -> tuple:
    angle = -math.pi / 2.0 + index * (2.0 * math.pi / len(RADAR_PARAMETERS))
    return (_CENTER + radius * math.cos(angle),
            _CENTER + radius * math.sin(angle))


def _points(ratios: dict) -> str:
    pts = []
    for i, parameter in enumerate(RADAR_PARAMETERS):
        ratio = float(ratios[parameter])
        check_positive(f"ratio {parameter}", ratio)
        x, y = _vertex(i, _RADIUS * ratio / (ratio + 1.0))
        pts.append(f"{x:.2f},{y:.2f}")
    return " ".join(pts)


def render_radar_svg(profile: PosteriorProfile,
                     reference: ReferencePopulation,
                     max_draw_polylines: int = 100) -> str:
    """Render one profile against a reference population as SVG text."""
    if max_draw_polylines < 0:
        raise ValueError("max_draw_polylines must be >= 0")
    medians = {p: float(reference.medians[p]) for p in RADAR_PARAMETERS}
    for parameter, value in medians.items():
        check_positive(f"reference median {parameter}", value)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE:.0f}" '
        f'height="{_SIZE:.0f}" viewBox="0 0 {_SIZE:.0f} {_SIZE:.0f}">',
        "<desc>hydrodynamic profile, ratios to reference population "
        f"{reference.name!r}; config {profile.provenance.get('config_hash', '?')}, "
        f"seed {profile.provenance.get('seed', '?')}</desc>",
        f'<rect width="{_SIZE:.0f}" height="{_SIZE:.0f}" fill="white"/>',
    ]

    for i, parameter in enumerate(RADAR_PARAMETERS):
        x, y = _vertex(i, _RADIUS)
        parts.append(
            f'<line x1="{_CENTER:.2f}" y1="{_CENTER:.2f}" x2="{x:.2f}" '
            f'y2="{y:.2f}" stroke="#cccccc" stroke-width="1"/>')
        lx, ly = _vertex(i, _RADIUS * 1.12)
        parts.append(
            f'<text x="{lx:.2f}" y="{ly:.2f}" font-family="sans-serif" '
            'font-size="14" text-anchor="middle" dominant-baseline="middle" '
            f'fill="#333333">{AXIS_LABELS[parameter]}</text>')

    outer = " ".join(f"{x:.2f},{y:.2f}" for x, y in
                     (_vertex(i, _RADIUS) for i in range(len(RADAR_PARAMETERS))))
    parts.append(f'<polygon points="{outer}" fill="none" stroke="#999999" '
                 'stroke-width="1"/>')

    n_lines = min(max_draw_polylines, profile.n_draws)
    for d in range(n_lines):
        ratios = {p: profile.draws[p][d] / medians[p] for p in RADAR_PARAMETERS}
        parts.append(f'<polygon points="{_points(ratios)}" fill="none" '
                     'stroke="#7799cc" stroke-width="0.6" stroke-opacity="0.10"/>')

    reference_ring = " ".join(
        f"{x:.2f},{y:.2f}" for x, y in
        (_vertex(i, _RADIUS / 2.0) for i in range(len(RADAR_PARAMETERS))))
    parts.append(f'<polygon points="{reference_ring}" fill="none" '
                 'stroke="#555555" stroke-width="1.5" stroke-dasharray="6,4"/>')

    median_ratios = {p: profile.median(p) / medians[p] for p in RADAR_PARAMETERS}
    parts.append(f'<polygon points="{_points(median_ratios)}" '
                 'fill="#2266aa" fill-opacity="0.25" stroke="#2266aa" '
                 'stroke-width="2.5"/>')

    age = profile.provenance.get("age_years")
    iop = profile.provenance.get("iop_pa")
    if age is not None and iop is not None:
        title = (f"age {float(age):g} y, "
                 f"IOP {to_clinical(float(iop), 'pressure'):.1f} mmHg")
        parts.append(
            f'<text x="{_CENTER:.2f}" y="26" font-family="sans-serif" '
            f'font-size="16" text-anchor="middle" fill="#111111">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
