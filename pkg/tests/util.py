"""Shared oracles for the test suite: finite differences and brute-force AP.

These stay independent of the library code paths they check: the finite
difference oracle only calls the forward function it is handed, and the AP
oracle walks the precision/recall staircase with plain loops.
"""
from __future__ import annotations

import numpy as np


def numerical_grad(f, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of scalar f with respect to array x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-7) -> float:
    """Worst-case |a - n| / (|a| + |n|), ignoring pairs that agree within atol.

    The atol guard absorbs finite-difference truncation noise where the true
    gradient is (near) zero and a relative measure is meaningless.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    diff = np.abs(a - n)
    keep = diff > atol
    if not np.any(keep):
        return 0.0
    return float(np.max(diff[keep] / (np.abs(a[keep]) + np.abs(n[keep]))))


def nudge_relu_inputs(model, x, margin: float = 5e-3) -> None:
    """Shift concept biases so no pre-ReLU activation sits within ``margin`` of 0.

    Finite differences are only meaningful away from the ReLU kink; a bias
    shift moves a whole channel without changing the test's character.
    """
    from deepvote.ops import conv2d_forward

    pre = conv2d_forward(x, model.concept)
    for c in range(pre.shape[2]):
        vals = pre[:, :, c].ravel()
        for delta in np.arange(0.0, 2.0, 2.5 * margin):
            for signed in (delta, -delta):
                if np.min(np.abs(vals + signed)) > margin:
                    model.concept.bias[c] += signed
                    break
            else:
                continue
            break
        else:
            raise AssertionError("could not move channel off the ReLU kink")


def greedy_match_oracle(dets, gts_by_image, thresh):
    """Straight-line reimplementation of per-image greedy matching.

    dets: list of (image_id, score, box, tiebreak) tuples.  Returns tp/fp
    lists in processed order plus npos.
    """

    def iou(a, b):
        ix = max(0.0, min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0]))
        iy = max(0.0, min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1]))
        inter = ix * iy
        union = a[2] * a[3] + b[2] * b[3] - inter
        return inter / union if union > 0 else 0.0

    ordered = sorted(dets, key=lambda d: (-d[1], d[0], d[3]))
    claimed = {img: set() for img in gts_by_image}
    tp, fp = [], []
    for image_id, _score, box, _tb in ordered:
        gts = gts_by_image.get(image_id, [])
        best_j, best_v = -1, 0.0
        for j, g in enumerate(gts):
            if j in claimed.get(image_id, set()):
                continue
            v = iou(box, g)
            if v > best_v:
                best_j, best_v = j, v
        if best_j >= 0 and best_v >= thresh:
            tp.append(1)
            fp.append(0)
            claimed.setdefault(image_id, set()).add(best_j)
        else:
            tp.append(0)
            fp.append(1)
    npos = sum(len(v) for v in gts_by_image.values())
    return tp, fp, npos


def ap_staircase_oracle(tp, fp, npos):
    """Explicit PR-staircase integration: for every recall increment, take the
    best precision at that recall or beyond and accumulate area."""
    if npos == 0 or not tp:
        return 0.0
    n = len(tp)
    prec = []
    rec = []
    t = f = 0
    for i in range(n):
        t += tp[i]
        f += fp[i]
        prec.append(t / (t + f))
        rec.append(t / npos)
    ap = 0.0
    prev_r = 0.0
    for i in range(n):
        if rec[i] > prev_r:
            best_p = max(prec[j] for j in range(n) if rec[j] >= rec[i])
            ap += (rec[i] - prev_r) * best_p
            prev_r = rec[i]
    return ap
