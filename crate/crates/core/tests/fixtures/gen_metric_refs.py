"""Regenerates metric_refs.json from the pysodmetrics reference implementation.

    python3 gen_metric_refs.py > metric_refs.json

Predictions are passed to the internal routines directly, bypassing the
package's input normalization. Ground truths are single rectangles, or
arbitrary blobs paired with predictions that are constant on the
foreground, so nearest-foreground ties in the distance transform cannot
change the weighted F-measure.
"""
import json

import numpy as np
from py_sod_metrics.sod_metrics import Emeasure, Smeasure, WeightedFmeasure


def rect_gt(rng, h, w):
    gt = np.zeros((h, w), dtype=bool)
    y0, x0 = rng.integers(1, h // 2), rng.integers(1, w // 2)
    y1, x1 = rng.integers(y0 + 1, h), rng.integers(x0 + 1, w)
    gt[y0:y1, x0:x1] = True
    return gt


def blob_gt(rng, h, w):
    gt = np.zeros((h, w), dtype=bool)
    for _ in range(3):
        cy, cx, r = rng.integers(0, h), rng.integers(0, w), rng.integers(2, 5)
        yy, xx = np.ogrid[:h, :w]
        gt |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return gt


def emeasure(pred, gt, thr):
    em = Emeasure()
    em.gt_fg_numel = np.count_nonzero(gt)
    em.gt_size = gt.size
    return float(em.cal_em_with_threshold(pred, gt, thr))


def record(name, pred, gt):
    return {
        "name": name,
        "width": int(gt.shape[1]),
        "height": int(gt.shape[0]),
        "pred": [float(v) for v in pred.ravel()],
        "gt": [int(v) for v in gt.ravel()],
        "wfm_beta1": 0.0 if not gt.any() else float(WeightedFmeasure(beta=1).cal_wfm(pred, gt)),
        "wfm_beta03": 0.0 if not gt.any() else float(WeightedFmeasure(beta=0.3).cal_wfm(pred, gt)),
        "em_sum_over_n_minus_1": emeasure(pred, gt, 0.5),
        "sm": float(Smeasure(alpha=0.5).cal_sm(pred, gt)),
    }


def main():
    rng = np.random.default_rng(20240611)
    out = []
    for i in range(12):
        h, w = int(rng.integers(12, 31)), int(rng.integers(12, 31))
        gt = rect_gt(rng, h, w)
        if i % 3 == 0:
            pred = rng.random((h, w))
        elif i % 3 == 1:
            pred = np.clip(gt * 0.8 + rng.normal(0, 0.2, (h, w)), 0, 1)
        else:
            pred = np.clip(np.roll(gt, (1, 2), axis=(0, 1)) * 0.9 + rng.random((h, w)) * 0.2, 0, 1)
        out.append(record(f"rect_{i}", pred, gt))
    for i in range(6):
        h, w = int(rng.integers(14, 28)), int(rng.integers(14, 28))
        gt = blob_gt(rng, h, w)
        pred = np.where(gt, rng.random(), rng.random((h, w)))
        out.append(record(f"blob_{i}", pred, gt))
    gt = rect_gt(rng, 16, 16)
    out.append(record("inverse", 1.0 - gt.astype(float), gt))
    out.append(record("empty_gt", rng.random((10, 12)), np.zeros((10, 12), dtype=bool)))
    out.append(record("full_gt", rng.random((9, 11)), np.ones((9, 11), dtype=bool)))
    print(json.dumps(out))


if __name__ == "__main__":
    main()
