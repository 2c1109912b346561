"""Verify analytic gradients against central finite differences.

Every layer in this package ships a hand-written backward pass; this
script spot-checks the three composition levels the test suite pins
down: hierarchical aggregation, the attention fusion block, and the
full network driven by the training loss.
"""

import time

import numpy as np

from rgbtrack import hfa, model, qaa
from rgbtrack.backbone import BackboneConfig, ConvLayerSpec
from rgbtrack.gradcheck import check_param_grads
from rgbtrack.head import HeadConfig


def small_config():
    return model.ModelConfig(
        backbone=BackboneConfig(layers=(
            ConvLayerSpec(4, 3, 2), ConvLayerSpec(6, 3, 1), ConvLayerSpec(8, 3, 1, dilation=3),
        )),
        c_agg=4, d_embed=8, head=HeadConfig(fc1_units=16, fc2_units=12),
    )


def main():
    rng = np.random.default_rng(0)

    print("== hierarchical aggregation ==")
    params = hfa.init_hfa_params((4, 6, 8), 4, rng)
    maps = tuple(rng.random((1, c, s, s)) for c, s in zip((4, 6, 8), (8, 4, 4)))
    proj = rng.normal(size=(1, 12, 4, 4))

    def hfa_loss():
        x_m, _ = hfa.aggregate(*maps, params)
        return float((x_m * proj).sum())

    _, cache = hfa.aggregate(*maps, params)
    _, grads = hfa.backward(proj, cache, params)
    errs = check_param_grads(hfa_loss, dict(params.named_arrays()), dict(grads.named_arrays()))
    print(f"  max relative error over {len(errs)} tensors: {max(errs.values()):.2e}")

    print("== attention fusion ==")
    qp = qaa.init_qaa_params(6, 5, rng)
    x_rgb, x_t = rng.random((1, 6, 4, 4)), rng.random((1, 6, 4, 4))
    qproj = rng.normal(size=(1, 6, 4, 4))

    def qaa_loss():
        f, _, _ = qaa.qaa_forward(x_rgb, x_t, qp)
        return float((f * qproj).sum())

    _, _, qc = qaa.qaa_forward(x_rgb, x_t, qp)
    dxr, dxt, qg = qaa.qaa_backward(qproj, qc, qp)
    errs = check_param_grads(
        qaa_loss,
        {"w": qp.w, "w21": qp.w21, "w22": qp.w22, "x_rgb": x_rgb, "x_t": x_t},
        {"w": qg.w, "w21": qg.w21, "w22": qg.w22, "x_rgb": dxr, "x_t": dxt},
    )
    print(f"  max relative error (params and both inputs): {max(errs.values()):.2e}")

    print("== full composite through the training loss ==")
    cfg = small_config()
    mp = model.init_model_params(cfg, 2, rng)
    for name, arr, _ in model.named_params(mp):
        if name.endswith(".b"):
            arr += rng.normal(0, 0.05, arr.shape)  # keep ReLUs off their kinks
    rgb, t = rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16))
    boxes = np.array([[1.0, 1.0, 10.0, 9.0], [4.0, 3.0, 8.0, 10.0], [2.0, 5.0, 9.0, 7.0]])
    fidx = np.array([0, 1, 1])
    labels = np.array([1, 0, 1])

    def full_loss():
        return model.loss_and_grads(mp, cfg, rgb, t, boxes, fidx, labels, 0,
                                    train=False, compute_grads=False)[0]

    t0 = time.time()
    _, _, _, grads, _ = model.loss_and_grads(mp, cfg, rgb, t, boxes, fidx, labels, 0, train=False)
    pdict = {n: a for n, a, _ in model.named_params(mp)}
    errs = check_param_grads(full_loss, pdict, grads, max_coords=120)
    worst = max(errs, key=errs.get)
    print(f"  {len(pdict)} tensors checked in {time.time() - t0:.1f}s; "
          f"worst {errs[worst]:.2e} ({worst})")


if __name__ == "__main__":
    main()
