"""Finite-difference verification suite over every differentiable op and the
composite training path. Used by the `gradcheck` CLI command and the test
suite; everything runs in 64-bit mode on small random instances.
"""

import numpy as np

from . import backbone, losses, mrsg, ops, rce, tensor
from .config import TrainConfig
from .gradcheck import grad_check
from .params import ParamStore
from .rng import Rng


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, shape).astype(np.float64)


def _away_from_zero(x, margin=2e-2):
    # Keep ReLU/max kinks farther than the FD step from the evaluation point.
    return x + margin * np.sign(x)


def _probs(rng, shape, lo=0.05, hi=0.95):
    return rng.uniform(lo, hi, shape).astype(np.float64)


# -- closures ---------------------------------------------------------------

def _conv_case(rng, xshape, wshape, stride, pad):
    def op(x, w, b):
        y, cache = ops.conv2d(x, w, b, stride=stride, pad=pad)

        def back(dy):
            return ops.conv2d_backward(dy, cache)
        return y, back
    fan = wshape[1] * wshape[2] * wshape[3]
    return op, [_rand(rng, xshape), _rand(rng, wshape) / fan, _rand(rng, (wshape[0],))]


def _bn_case(rng, shape, mode):
    c = shape[1]
    rm = np.zeros(c)
    rv = np.ones(c)

    def op(x, gamma, beta):
        y, cache = ops.batchnorm(x, gamma, beta, rm.copy(), rv.copy(), mode,
                                 update_running=False)

        def back(dy):
            return ops.batchnorm_backward(dy, cache)
        return y, back
    return op, [_rand(rng, shape), _rand(rng, (c,), 0.5, 1.5), _rand(rng, (c,))]


def _unary_case(forward, backward, x):
    def op(xi):
        y, cache = forward(xi)

        def back(dy):
            return backward(dy, cache)
        return y, back
    return op, [x]


def _simvol_case(rng, shape, d):
    def op(y):
        vol, cache = mrsg.similarity_volume(y, d)

        def back(dvol):
            return mrsg.similarity_volume_backward(dvol, cache)
        return vol, back
    return op, [_probs(rng, shape)]


def _apply_case(rng, hw, d, normalize="sum"):
    h, w = hw

    def op(y, bank):
        out, cache = mrsg.apply_pa_filters(y, bank, normalize=normalize)

        def back(dout):
            dy, dbank = mrsg.apply_pa_filters_backward(dout, cache)
            return dy, dbank
        return out, back
    return op, [_probs(rng, (1, 1, h, w)),
                _rand(rng, (1, d * d, h, w), 0.05, 1.0)]


def _bottleneck_case(rng, hw, d):
    h, w = hw
    store = mrsg.init_mrsg_params(d + 2, Rng(7).split("weights"), ParamStore())

    def op(vol, wgt, b, gamma, beta):
        store[f"mrsg.f{d}.w"].value = wgt
        store[f"mrsg.f{d}.b"].value = b
        store[f"mrsg.f{d}.gamma"].value = gamma
        store[f"mrsg.f{d}.beta"].value = beta
        store.zero_grads()
        y, cache = mrsg.bottleneck_f(vol, store, d, "train", update_running=False)

        def back(dy):
            dvol = mrsg.bottleneck_f_backward(dy, cache, store)
            grads = (store[f"mrsg.f{d}.w"].grad.copy(), store[f"mrsg.f{d}.b"].grad.copy(),
                     store[f"mrsg.f{d}.gamma"].grad.copy(), store[f"mrsg.f{d}.beta"].grad.copy())
            store.zero_grads()
            return (dvol,) + grads
        return y, back
    # Weight scale ~1 keeps the conv-output spread healthy; batchnorm's 1/sigma
    # otherwise amplifies FD perturbations into the ReLU kinks.
    cin, cout = d * d, (d + 2) ** 2
    return op, [_rand(rng, (1, cin, h, w), 0.0, 1.0),
                _rand(rng, (cout, cin, 1, 1)), _rand(rng, (cout,)),
                _rand(rng, (cout,), 0.5, 1.5), _rand(rng, (cout,))]


def _assemble_case(rng, hw, d_final):
    h, w = hw
    store = mrsg.init_mrsg_params(d_final, Rng(11).split("weights"), ParamStore())
    wname = "mrsg.f3.w"

    def op(y, wgt):
        store[wname].value = wgt
        store.zero_grads()
        bank, cache = mrsg.mrsg_assemble(y, d_final, store, "train", update_running=False)

        def back(dbank):
            dy = mrsg.mrsg_assemble_backward(dbank, cache, store)
            g = store[wname].grad.copy()
            store.zero_grads()
            return dy, g
        return bank, back
    return op, [_probs(rng, (1, 1, h, w)), store[wname].value.copy()]


def _dice_case(rng, hw):
    g = (rng.random((1, 1) + hw) < 0.3).astype(np.float64)

    def op(y):
        value, back = losses.dice_loss(y, g)
        return np.float64(value), lambda dl: back(float(dl))
    return op, [_probs(rng, (1, 1) + hw)]


def _reg_case(rng, hw):
    def op(y1, y2):
        value, back = losses.reg_loss(y1, y2)
        return np.float64(value), lambda dl: back(float(dl))
    return op, [_rand(rng, (1, 1) + hw), _rand(rng, (1, 1) + hw)]


def _unet_case(rng, hw, depth, base, param_names, mode="train"):
    cfg = backbone.UNetConfig(depth=depth, base_width=base)
    store = backbone.init_params(cfg, Rng(5).split("weights"))

    def op(x, *pvals):
        for name, v in zip(param_names, pvals):
            store[name].value = v
        store.zero_grads()
        y, cache = backbone.unet_forward(x, store, cfg, mode, update_running=False)

        def back(dy):
            dx = backbone.unet_backward(dy, cache, store)
            grads = tuple(store[name].grad.copy() for name in param_names)
            store.zero_grads()
            return (dx,) + grads
        return y, back
    inputs = [_rand(rng, (1, 3) + hw, 0.0, 1.0)]
    inputs += [store[name].value.copy() for name in param_names]
    return op, inputs


def _composite_case(rng, hw, d_filter, param_names):
    """Dual-branch training loss with the erasure set frozen at the
    unperturbed point (selection is piecewise constant by design)."""
    cfg = TrainConfig(depth=2, base_width=2, d_filter=d_filter, lam=0.1,
                      k=3, precision=64)
    ucfg = cfg.unet_config()
    root = Rng(13)
    store = backbone.init_params(ucfg, root.split("weights"))
    mrsg.init_mrsg_params(d_filter, root.split("weights2"), store)
    g = (rng.random((1, 1) + hw) < 0.3).astype(np.float64)
    x0 = _rand(rng, (1, 3) + hw, 0.0, 1.0)
    coarse0, _ = backbone.unet_forward(x0, store, ucfg, "train", update_running=False)
    eset = rce.select_topk_confident(coarse0[0], cfg.k)

    def branch(x):
        coarse, c_u = backbone.unet_forward(x, store, ucfg, "train", update_running=False)
        bank, c_m = mrsg.mrsg_assemble(coarse, d_filter, store, "train", update_running=False)
        refined, c_a = mrsg.apply_pa_filters(coarse, bank)
        return refined, (c_u, c_m, c_a)

    def branch_back(dref, caches):
        c_u, c_m, c_a = caches
        dcoarse, dbank = mrsg.apply_pa_filters_backward(dref, c_a)
        dcoarse = dcoarse + mrsg.mrsg_assemble_backward(dbank, c_m, store)
        return backbone.unet_backward(dcoarse, c_u, store)

    def op(x, *pvals):
        for name, v in zip(param_names, pvals):
            store[name].value = v
        store.zero_grads()
        y1, cache1 = branch(x)
        erased = rce.erase(x[0], eset)[None]
        y2, cache2 = branch(erased)
        value, back_l = losses.total_loss(y1, y2, g, cfg.lam)

        def back(dl):
            d1, d2 = back_l(float(dl))
            dx = branch_back(d1, cache1)
            dx2 = branch_back(d2, cache2)
            # erase is a pointwise mask on the aux input
            dx2 = dx2.copy()
            if len(eset):
                dx2[:, :, eset.positions[:, 0], eset.positions[:, 1]] = 0.0
            grads = tuple(store[name].grad.copy() for name in param_names)
            store.zero_grads()
            return (dx + dx2,) + grads
        return np.float64(value.total), back
    inputs = [x0]
    inputs += [store[name].value.copy() for name in param_names]
    return op, inputs


# -- the suite ---------------------------------------------------------------

def build_suite():
    """(name, op, inputs, tolerance) tuples; >= 3 instances per op family."""
    cases = []
    r = lambda s: Rng(s).split("gradcheck")

    for i, (xs, ws, st, pd) in enumerate([
            ((1, 2, 5, 5), (3, 2, 3, 3), 1, 1),
            ((2, 3, 6, 6), (2, 3, 3, 3), 1, 0),
            ((1, 1, 7, 7), (2, 1, 3, 3), 2, 1),
            ((2, 2, 4, 4), (3, 2, 1, 1), 1, 0)]):
        op, inp = _conv_case(r(20 + i), xs, ws, st, pd)
        cases.append((f"conv2d[{i}]", op, inp, 1e-4))

    for i, shape in enumerate([(2, 3, 4, 4), (1, 4, 5, 5), (4, 2, 3, 3)]):
        op, inp = _bn_case(r(30 + i), shape, "train")
        cases.append((f"batchnorm_train[{i}]", op, inp, 1e-4))
    op, inp = _bn_case(r(34), (2, 3, 4, 4), "infer")
    cases.append(("batchnorm_infer", op, inp, 1e-4))

    for i, shape in enumerate([(1, 2, 4, 4), (2, 1, 5, 5), (1, 3, 3, 3)]):
        x = _away_from_zero(_rand(r(40 + i), shape))
        cases.append((f"relu[{i}]", *_unary_case(ops.relu, ops.relu_backward, x), 1e-4))
        x2 = _rand(r(50 + i), shape, -3.0, 3.0)
        cases.append((f"sigmoid[{i}]", *_unary_case(ops.sigmoid, ops.sigmoid_backward, x2), 1e-4))

    for i, shape in enumerate([(1, 2, 4, 4), (2, 1, 6, 6), (1, 3, 2, 2)]):
        x = _rand(r(60 + i), shape)
        cases.append((f"maxpool2[{i}]", *_unary_case(ops.maxpool2, ops.maxpool2_backward, x), 1e-4))
        x3 = _rand(r(70 + i), shape)
        cases.append((f"upsample[{i}]",
                      *_unary_case(ops.upsample_nearest2,
                                   lambda dy, c: ops.upsample_nearest2_backward(dy), x3), 1e-4))

    for i, shape in enumerate([(1, 2, 3, 3), (2, 1, 4, 4), (1, 4, 2, 2)]):
        a, b = _rand(r(80 + i), shape), _rand(r(90 + i), shape)

        def mk_binary(fwd, bwd):
            def op(ai, bi):
                y, cache = fwd(ai, bi)
                return y, (lambda dy: bwd(dy, cache))
            return op
        cases.append((f"add[{i}]", mk_binary(ops.add, lambda dy, c: ops.add_backward(dy)),
                      [a, b], 1e-4))
        cases.append((f"mul[{i}]", mk_binary(ops.mul, ops.mul_backward),
                      [a.copy(), b.copy()], 1e-4))

        def concat_op(ai, bi):
            y, cache = ops.concat_channels([ai, bi])
            return y, (lambda dy: tuple(ops.concat_channels_backward(dy, cache)))
        cases.append((f"concat[{i}]", concat_op, [a.copy(), b.copy()], 1e-4))

    for i, (shape, d) in enumerate([((1, 1, 5, 5), 3), ((1, 1, 6, 6), 5),
                                    ((2, 1, 4, 4), 3)]):
        op, inp = _simvol_case(r(100 + i), shape, d)
        cases.append((f"similarity_volume[{i}]", op, inp, 1e-4))

    for i, (hw, d) in enumerate([((5, 5), 3), ((6, 6), 5), ((4, 4), 3)]):
        op, inp = _apply_case(r(110 + i), hw, d)
        cases.append((f"apply_pa_filters[{i}]", op, inp, 1e-4))
    op, inp = _apply_case(r(115), (4, 4), 3, normalize="sigmoid")
    cases.append(("apply_pa_filters[sigmoid]", op, inp, 1e-4))
    op, inp = _apply_case(r(116), (4, 4), 3, normalize="clamp")
    cases.append(("apply_pa_filters[clamp]", op, inp, 1e-4))

    for i, (hw, d) in enumerate([((4, 4), 3), ((5, 5), 5), ((3, 3), 3)]):
        op, inp = _bottleneck_case(r(122 + i), hw, d)
        cases.append((f"bottleneck_f[{i}]", op, inp, 1e-4))

    for i, (hw, df) in enumerate([((6, 6), 5), ((4, 4), 7), ((5, 5), 5)]):
        op, inp = _assemble_case(r(130 + i), hw, df)
        cases.append((f"mrsg_assemble[{i}]", op, inp, 1e-4))

    for i, hw in enumerate([(4, 4), (6, 6), (5, 5)]):
        op, inp = _dice_case(r(140 + i), hw)
        cases.append((f"dice_loss[{i}]", op, inp, 1e-4))
        op, inp = _reg_case(r(150 + i), hw)
        cases.append((f"reg_loss[{i}]", op, inp, 1e-4))

    # Depth 5 pools 16x16 down to 1x1, where train-mode batch variance is zero
    # and finite differences blow up in the epsilon regime; the full-depth
    # check therefore runs the inference path. Train-mode batchnorm through a
    # deep stack is covered by the depth-3 case (4x4 bottom).
    op, inp = _unet_case(r(160), (16, 16), 5, 2, ["head.w", "enc0.1.gamma"], mode="infer")
    cases.append(("unet_16x16_infer", op, inp, 1e-3))
    op, inp = _unet_case(r(165), (16, 16), 3, 2, ["head.w", "enc1.1.gamma"])
    cases.append(("unet_16x16_d3_train", op, inp, 1e-3))
    op, inp = _unet_case(r(161), (8, 8), 2, 2, ["head.w", "enc0.1.w"])
    cases.append(("unet_8x8_train", op, inp, 1e-3))

    for i, hw in enumerate([(8, 8), (8, 8)]):
        op, inp = _composite_case(r(170 + i), hw, 5 if i == 0 else 3,
                                  ["head.w", "mrsg.f3.b" if i == 0 else "head.b",
                                   "enc0.1.beta"])
        cases.append((f"composite_loss[{i}]", op, inp, 1e-3))
    return cases


def run_suite(verbose: bool = False):
    """Run every case in 64-bit mode; returns (all_passed, results)."""
    results = []
    with tensor.precision(64):
        for name, op, inputs, tol in build_suite():
            report = grad_check(op, inputs, tolerance=tol)
            results.append((name, report))
            if verbose:
                status = "ok" if report.passed else "FAIL"
                worst = max(report.max_rel_errors)
                print(f"  {name:<28s} max_rel_err={worst:.3e}  tol={tol:g}  {status}")
    return all(rep.passed for _, rep in results), results
