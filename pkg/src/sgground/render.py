"""Static SVG rendering of a grounding result.

Gray boxes are ground-truth instances, colored boxes are the predicted
localization per query node, and the side panel lists the query graph with a
color legend.  Output bytes are deterministic for fixed inputs.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

SCENE_PX = 640
PANEL_PX = 300
MARGIN = 10

NODE_COLORS = (
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd",
    "#8c564b", "#e377c2", "#17becf", "#bcbd22",
)


def _rect(box, stroke, width, dash=None, opacity=1.0):
    x1, y1, x2, y2 = box.corners()
    x = MARGIN + x1 * SCENE_PX
    y = MARGIN + y1 * SCENE_PX
    w = (x2 - x1) * SCENE_PX
    h = (y2 - y1) * SCENE_PX
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" '
        f'fill="none" stroke="{stroke}" stroke-width="{width}" '
        f'stroke-opacity="{opacity}"{dash_attr}/>'
    )


def _text(x, y, content, size=13, color="#202020", bold=False):
    weight = ' font-weight="bold"' if bold else ""
    return (
        f'<text x="{x:.2f}" y="{y:.2f}" font-family="monospace" '
        f'font-size="{size}" fill="{color}"{weight}>{escape(content)}</text>'
    )


def render_svg(scene, query, proposals, localization) -> str:
    """SVG 1.1 document for one grounded query."""
    if not query.nodes:
        raise ValueError("cannot render an empty query")
    width = SCENE_PX + PANEL_PX + 3 * MARGIN
    height = SCENE_PX + 2 * MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{SCENE_PX}" height="{SCENE_PX}" '
        f'fill="none" stroke="#404040" stroke-width="1"/>',
    ]
    for inst in scene.instances:
        parts.append(_rect(inst.box, "#9a9a9a", 1.5, dash="4,3", opacity=0.9))
        x1, y1, _, _ = inst.box.corners()
        parts.append(_text(MARGIN + x1 * SCENE_PX + 2, MARGIN + y1 * SCENE_PX + 12,
                           f"{inst.cls}#{inst.id}", size=10, color="#707070"))

    colors = {}
    for i, node in enumerate(query.nodes):
        colors[node.node_id] = NODE_COLORS[i % len(NODE_COLORS)]
        parts.append(_rect(localization.chosen_boxes[i], colors[node.node_id], 3.0))

    px = SCENE_PX + 2 * MARGIN
    y = MARGIN + 18
    parts.append(_text(px, y, f"scene {scene.scene_id}", size=14, bold=True))
    y += 24
    parts.append(_text(px, y, "query nodes:", bold=True))
    y += 18
    for i, node in enumerate(query.nodes):
        c = colors[node.node_id]
        parts.append(f'<rect x="{px}" y="{y - 10}" width="10" height="10" fill="{c}"/>')
        top = localization.ranked[i][0]
        parts.append(_text(px + 16, y, f"n{node.node_id}:{node.cls} -> p{top[0]} "
                                       f"({top[1]:.3f})"))
        y += 18
    y += 10
    parts.append(_text(px, y, "query edges:", bold=True))
    y += 18
    for src, pred, dst in query.edges:
        parts.append(_text(px + 16, y, f"n{src} --{pred}--> n{dst}"))
        y += 18
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
