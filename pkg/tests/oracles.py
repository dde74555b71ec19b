"""Independent oracles used across the test suite.

These deliberately avoid the implementation paths they check: IoU by grid
cell counting instead of rectangle arithmetic, labels by brute-force
enumeration instead of vectorized masks.
"""

import numpy as np


def pixel_grid_iou(a, b, grid: int = 2000) -> float:
    """IoU by counting grid cells whose centers fall inside each box.

    For axis-aligned boxes the cell count factorizes per axis, so the count
    is exact for the discretized boxes; accuracy is O(perimeter / grid).
    """
    centers = (np.arange(grid) + 0.5) / grid

    def axis_counts(lo, hi):
        return (centers >= lo) & (centers <= hi)

    def box_masks(box):
        x1, y1, x2, y2 = box.corners()
        return axis_counts(x1, x2), axis_counts(y1, y2)

    ax, ay = box_masks(a)
    bx, by = box_masks(b)
    area_a = ax.sum() * ay.sum()
    area_b = bx.sum() * by.sum()
    inter = (ax & bx).sum() * (ay & by).sum()
    union = area_a + area_b - inter
    if union == 0:
        return 0.0
    return inter / union


def brute_force_edge_labels(proposals, query, scene, relation_tokens, iou_fn):
    """(E, K) booleans over all ordered pairs by direct triple enumeration."""
    n = len(proposals)
    node_target = {node.node_id: node.target for node in query.nodes}
    out = {}
    for i, token in enumerate(relation_tokens):
        for src, pred, dst in query.edges:
            if pred != token:
                continue
            s_box = scene.instance_by_id(node_target[src]).box
            o_box = scene.instance_by_id(node_target[dst]).box
            for k in range(n):
                for j in range(n):
                    if k == j:
                        continue
                    if iou_fn(proposals[k].box, s_box) >= 0.5 and \
                            iou_fn(proposals[j].box, o_box) >= 0.5:
                        out[(k, j, i)] = True
    return out
