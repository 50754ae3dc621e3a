"""The finite-difference verification suite run by tests and the CLI.

Every differentiable operation is checked against central differences at
64-bit precision; the composed check runs the full detection forward pass
plus loss on a small image.
"""

from __future__ import annotations

import numpy as np

from . import targets as tg
from . import tensor as T
from .gradcheck import GradCheckReport, finite_difference_check
from .network import CorrelationNetwork, NetworkConfig
from .tensor import BatchNormState, Tensor

OP_TOL = 1e-4
COMPOSED_TOL = 1e-3


def _rt(rng, *shape) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, shape), requires_grad=True)


def run_suite(seed: int = 0, composed_entries: int = 40):
    """Returns [(name, GradCheckReport), ...] for the whole suite."""
    rng = np.random.default_rng(seed)
    results = []

    def check(name, f, leaves, tol=OP_TOL, max_entries=None):
        report = finite_difference_check(f, leaves, tolerance=tol,
                                         max_entries=max_entries, rng=rng)
        results.append((name, report))

    x = _rt(rng, 2, 6, 8, 3)
    k = _rt(rng, 3, 3, 3, 4)
    check("conv2d_same", lambda: T.conv2d(x, k, 1, "same").sum(), [x, k])
    check("conv2d_stride2_valid",
          lambda: T.conv2d(x, k, 2, "valid").sum(), [x, k])

    xb = _rt(rng, 4, 5, 5, 3)
    gamma, beta = _rt(rng, 3), _rt(rng, 3)
    st = BatchNormState.create(3)
    # random linear readout: sum(bn(x)^2) is exactly constant in x and
    # would only compare rounding noise
    wread = rng.normal(0.0, 1.0, (4, 5, 5, 3))
    check("batch_norm_train",
          lambda: (T.batch_norm(xb, gamma, beta, st, True) * wread).sum(),
          [xb, gamma, beta])
    st2 = BatchNormState.create(3)
    st2.running_mean[:] = rng.normal(size=3)
    st2.running_var[:] = rng.uniform(0.5, 2.0, 3)
    check("batch_norm_eval",
          lambda: (T.batch_norm(xb, gamma, beta, st2, False) ** 2.0).sum(),
          [xb, gamma, beta])

    a, b = _rt(rng, 7), _rt(rng, 7)
    check("elementwise_mix",
          lambda: (T.sigmoid(a) * T.relu(b) + T.softplus(a) / (2.0 + T.sigmoid(b))
                   + T.atan(a)).sum(), [a, b])
    m1, m2 = _rt(rng, 4, 5), _rt(rng, 5, 3)
    check("matmul_linear",
          lambda: (T.matmul(m1, m2) ** 2.0).sum(), [m1, m2])
    c1, c2 = _rt(rng, 3, 4), _rt(rng, 3, 2)
    check("concat_reshape",
          lambda: (T.concat([c1, c2], axis=1).flatten() ** 2.0).sum(), [c1, c2])
    mp = _rt(rng, 1, 6, 6, 2)
    check("max_pool", lambda: (T.max_pool2d(mp, 3, 1, "same") ** 2.0).sum(), [mp])
    cs1, cs2 = _rt(rng, 5, 8), _rt(rng, 5, 8)
    check("cosine_similarity",
          lambda: T.cosine_similarity(cs1, cs2).sum(), [cs1, cs2])
    up = _rt(rng, 1, 3, 4, 2)
    check("upsample2x", lambda: (T.upsample2x(up, 6, 8) ** 2.0).sum(), [up])

    gx = _rt(rng, 1, 4, 4, 6)
    gy = Tensor(rng.uniform(0.05, 0.95, (1, 4, 4, 1)), requires_grad=True)
    check("gate", lambda: ((gx * gy) ** 2.0).sum(), [gx, gy])

    cfg = NetworkConfig(input_h=32, input_w=32, channels=8, corr_channels=8)
    net = CorrelationNetwork(cfg, seed=seed, dtype=np.float64)
    q = _rt(rng, 1, 4, 4, 8)
    kk = _rt(rng, 1, 4, 4, 8)
    check("global_correlation",
          lambda: (net.global_correlation(q, kk) ** 2.0).sum(),
          {"q": q, "k": kk, "w": net.params["corr.w"], "b": net.params["corr.b"]})
    qv = _rt(rng, 8)
    check("query_correlation",
          lambda: (net.query_correlation(qv, kk[0]) ** 2.0).sum(),
          {"q": qv, "k": kk})

    corr = _rt(rng, 6, 8)
    vvec = _rt(rng, 6, 8)
    check("box_head",
          lambda: (net.box_head(corr, vvec, training=True) ** 2.0).sum(),
          {"corr": corr, "v": vvec, "w": net.params["box.w"],
           "gamma": net.params["box_bn.gamma"]})

    heat = Tensor(rng.uniform(0.05, 0.95, (3, 4, 2)), requires_grad=True)
    gt_heat = rng.uniform(0.0, 0.99, (3, 4, 2))
    gt_heat[1, 2, 0] = 1.0
    check("focal_loss", lambda: tg.focal_loss(heat, gt_heat), [heat])

    pred_boxes = Tensor(np.column_stack([
        rng.normal(0, 2, 5), rng.normal(0, 2, 5),
        rng.uniform(0.5, 3, 5), rng.uniform(0.5, 3, 5)]), requires_grad=True)
    gt_boxes = np.column_stack([
        rng.normal(0, 2, 5), rng.normal(0, 2, 5),
        rng.uniform(0.5, 3, 5), rng.uniform(0.5, 3, 5)])
    check("ciou_loss", lambda: tg.ciou_terms(pred_boxes, gt_boxes).sum(),
          [pred_boxes])

    heat2 = Tensor(rng.uniform(0.05, 0.95, (1, 4, 4, 1)), requires_grad=True)
    boxes2 = Tensor(np.concatenate([
        rng.normal(2, 1, (1, 4, 4, 2)), rng.uniform(0.5, 2, (1, 4, 4, 2))],
        axis=-1), requires_grad=True)
    tm = tg.build_targets([(0, np.array([1.7, 2.2, 2.0, 3.0]))], 4, 4, 1)
    check("total_loss",
          lambda: tg.total_loss(*tg.detection_loss(heat2, boxes2, [tm]),
                                Tensor(np.zeros(())), Tensor(np.zeros(()))),
          [heat2, boxes2])

    # composed: full detection forward plus loss on a 32x32 image
    image = Tensor(rng.uniform(0.0, 1.0, (1, 32, 32, 3)), requires_grad=True)
    tm32 = tg.build_targets(
        [(0, np.array([1.2, 1.4, 1.6, 2.0])), (0, np.array([2.8, 2.6, 1.2, 1.1]))],
        4, 4, 1)

    def composed():
        out = net.detection_forward(image, training=True)
        l_cla, l_reg = tg.detection_loss(out.heatmap, out.boxes, [tm32])
        return tg.total_loss(l_cla, l_reg, Tensor(np.zeros(())), Tensor(np.zeros(())))

    leaves = {"image": image}
    leaves.update(net.params)
    # q/k/v conv biases feed straight into a BN mean-subtraction, so their
    # true gradient is exactly zero; finite differences only measure noise
    for dead in ("q.b", "k.b", "v.b"):
        leaves.pop(dead)
    report = finite_difference_check(
        composed, leaves, tolerance=COMPOSED_TOL,
        max_entries=composed_entries, rng=rng)
    results.append(("composed_detection_forward", report))
    return results


def suite_passed(results) -> bool:
    return all(r.passed for _, r in results)


def format_results(results) -> str:
    lines = []
    for name, rep in results:
        status = "PASS" if rep.passed else "FAIL"
        lines.append(f"{status} {name:32s} max_rel_error={rep.max_rel_error:.3e} "
                     f"tol={rep.tolerance:.0e}")
    return "\n".join(lines)
