"""Brute-force metric oracles: plain loops and all-pairs distances, kept
deliberately independent of the library implementations they check."""

import numpy as np


def oracle_dsc(a, b):
    na = nb = ninter = 0
    for x, y in zip(np.asarray(a, dtype=bool).ravel(), np.asarray(b, dtype=bool).ravel()):
        na += bool(x)
        nb += bool(y)
        ninter += bool(x) and bool(y)
    if na == 0 and nb == 0:
        return 1.0
    return 2.0 * ninter / (na + nb)


def oracle_surface(mask):
    mask = np.asarray(mask, dtype=bool)
    d, h, w = mask.shape
    pts = []
    for z in range(d):
        for y in range(h):
            for x in range(w):
                if not mask[z, y, x]:
                    continue
                on_surface = False
                for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    zz, yy, xx = z + dz, y + dy, x + dx
                    if not (0 <= zz < d and 0 <= yy < h and 0 <= xx < w):
                        on_surface = True  # border voxel
                    elif not mask[zz, yy, xx]:
                        on_surface = True
                if on_surface:
                    pts.append((z, y, x))
    return np.asarray(pts, dtype=float)


def oracle_assd(a, b, spacing=(1.0, 1.0, 1.0)):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if not a.any() or not b.any():
        return None
    sp = np.asarray(spacing, dtype=float)
    sa = oracle_surface(a) * sp
    sb = oracle_surface(b) * sp
    dmat = np.sqrt(((sa[:, None, :] - sb[None, :, :]) ** 2).sum(-1))
    return float((dmat.min(axis=1).sum() + dmat.min(axis=0).sum()) / (len(sa) + len(sb)))


def oracle_fnsr_pfnsr(pred_labels, gt_labels, object_id):
    d = gt_labels.shape[0]
    present = [k for k in range(d) if (gt_labels[k] == object_id).any()]
    has_pred = {k: bool((pred_labels[k] == object_id).any()) for k in present}
    fn_count = sum(1 for k in present if not has_pred[k])
    with_pred = [k for k in present if has_pred[k]]
    if not with_pred:
        return fn_count / len(present), len(present) / len(present)
    first_pred = with_pred[0]
    last_pred = with_pred[-1]
    premature = sum(1 for k in present if k < first_pred or k > last_pred)
    return fn_count / len(present), premature / len(present)
