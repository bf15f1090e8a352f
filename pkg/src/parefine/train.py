"""Patch-based training loop: sampling, flip augmentation, Adam, periodic
evaluation, checkpointing, and full-image inference.

Everything stochastic draws from named substreams of the run seed (weights /
patches / augment), whose states go into the checkpoint, so an interrupted
run resumed from disk is bit-identical to an uninterrupted one.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backbone, checkpoint, losses, metrics, mrsg, pipeline, rce, tensor
from .config import TrainConfig
from .data import Sample
from .errors import NumericError, ParameterError
from .params import ParamStore
from .rng import Rng


def patch_size(image_h: int, image_w: int, ratio: float) -> tuple[int, int]:
    """Training patch extents: floor(ratio * dimension)."""
    if not (0.0 < ratio <= 1.0):
        raise ParameterError(f"patch ratio must be in (0, 1], got {ratio}")
    ph, pw = math.floor(ratio * image_h), math.floor(ratio * image_w)
    if min(ph, pw) < 16:
        raise ParameterError(
            f"patch {ph}x{pw} below the 16-pixel backbone minimum "
            f"(image {image_h}x{image_w}, ratio {ratio})")
    return ph, pw


def sample_patch(sample: Sample, shape: tuple[int, int], rng: Rng):
    """Uniform random crop applied consistently to image/label/mask."""
    ph, pw = shape
    h, w = sample.image.shape[1:]
    if ph > h or pw > w:
        raise ParameterError(f"patch {ph}x{pw} larger than image {h}x{w}")
    top = int(rng.integers(0, h - ph + 1))
    left = int(rng.integers(0, w - pw + 1))
    sl = (slice(None), slice(top, top + ph), slice(left, left + pw))
    return sample.image[sl], sample.label[sl], sample.fov_mask[sl]


def augment_flip(image, label, mask, rng: Rng):
    """Independent horizontal/vertical flips, p = 0.5 each, applied to the
    triple together. Draw order: horizontal first."""
    flip_h = rng.random() < 0.5
    flip_v = rng.random() < 0.5
    if flip_h:
        image, label, mask = (np.ascontiguousarray(a[:, :, ::-1]) for a in (image, label, mask))
    if flip_v:
        image, label, mask = (np.ascontiguousarray(a[:, ::-1, :]) for a in (image, label, mask))
    return image, label, mask


def adam_step(store: ParamStore, lr: float, t: int,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard Adam with bias correction; zeroes grads afterwards."""
    if t < 1:
        raise ParameterError(f"Adam step index must be >= 1, got {t}")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params():
        g = p.grad
        if tensor.debug_checks_enabled() and not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        p.value -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
        g[...] = 0.0


def init_model(cfg: TrainConfig, rng_weights: Rng) -> ParamStore:
    store = backbone.init_params(cfg.unet_config(), rng_weights)
    if cfg.use_pa:
        mrsg.init_mrsg_params(cfg.d_filter, rng_weights, store)
    return store


# --------------------------------------------------------------------------
# Loop
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    store: ParamStore
    config: TrainConfig
    iteration: int
    loss_rows: list = field(default_factory=list)     # (iter, total, l_s, l_r)
    metric_lines: list = field(default_factory=list)  # formatted eval records
    checkpoint_path: Path | None = None


def _assemble_batch(train_samples, shape, rng_patches, rng_augment, batch):
    imgs, labs = [], []
    for _ in range(batch):
        idx = int(rng_patches.integers(0, len(train_samples)))
        img, lab, msk = sample_patch(train_samples[idx], shape, rng_patches)
        img, lab, msk = augment_flip(img, lab, msk, rng_augment)
        imgs.append(img)
        labs.append(lab)
    return np.stack(imgs), np.stack(labs)


def _eval_record(iteration, reports):
    f1 = np.mean([r.f1 for r in reports])
    aucs = [r.auc for r in reports if r.auc is not None]
    auc = np.mean(aucs) if aucs else float("nan")
    acc = np.mean([r.acc for r in reports])
    return (f"iter={iteration} n={len(reports)} "
            f"f1={f1:.4f} auc={auc:.4f} acc={acc:.4f}")


def evaluate_model(samples, store, cfg: TrainConfig):
    """Full-image inference over a split; one report per sample."""
    reports = []
    for s in samples:
        _, refined = infer(s.image, store, cfg)
        reports.append(metrics.evaluate(refined, s.label, s.fov_mask))
    return reports


def train(train_samples, eval_samples, cfg: TrainConfig,
          out_dir=None, resume_from=None, stop_at: int | None = None) -> TrainResult:
    """Run the dual-branch loop to cfg.max_iters (or stop_at) and write the
    checkpoint, the per-iteration loss table, and the eval metric log."""
    if not train_samples:
        raise ParameterError("empty training set")
    tensor.set_precision(cfg.precision)

    if resume_from is not None:
        ck = checkpoint.load(resume_from)
        cfg = ck.config
        store = ck.store
        rngs = ck.restore_rngs()
        rng_patches, rng_augment = rngs["patches"], rngs["augment"]
        start_iter = ck.iteration
    else:
        root = Rng(cfg.seed)
        store = init_model(cfg, root.split("weights"))
        rng_patches, rng_augment = root.split("patches"), root.split("augment")
        start_iter = 0

    h, w = train_samples[0].image.shape[1:]
    shape = patch_size(h, w, cfg.patch_ratio)
    end_iter = min(cfg.max_iters, stop_at) if stop_at is not None else cfg.max_iters

    result = TrainResult(store=store, config=cfg, iteration=start_iter)
    for it in range(start_iter + 1, end_iter + 1):
        x, g = _assemble_batch(train_samples, shape, rng_patches, rng_augment, cfg.batch)

        if cfg.use_rce:
            outs = rce.dual_branch_forward(x, store, cfg)
            loss, back = losses.total_loss(outs.main_refined, outs.aux_refined, g, cfg.lam)
            d1, d2 = back()
            rce.dual_branch_backward(d1, d2, outs, store)
        else:
            _, refined, cache = pipeline.forward_refine(
                x, store, cfg, mode="train", update_running=True)
            l_s, back_s = losses.dice_loss(refined, g)
            loss = losses.LossValue(total=l_s, l_s=l_s, l_r=0.0, lam=cfg.lam)
            pipeline.backward_refine(back_s(), cache, store)

        if not math.isfinite(loss.total):
            raise NumericError(f"non-finite loss at iteration {it}: {loss.total}")
        adam_step(store, cfg.lr, it, cfg.beta1, cfg.beta2, cfg.adam_eps)
        result.loss_rows.append((it, loss.total, loss.l_s, loss.l_r))
        result.iteration = it

        if eval_samples and cfg.eval_every > 0 and it % cfg.eval_every == 0:
            reports = evaluate_model(eval_samples, store, cfg)
            result.metric_lines.append(_eval_record(it, reports))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "checkpoint.parf"
        checkpoint.save(ckpt, cfg, result.iteration,
                        {"patches": rng_patches, "augment": rng_augment}, store)
        result.checkpoint_path = ckpt
        (out / "loss.csv").write_text(
            "iter,total,l_s,l_r\n" + "".join(
                f"{i},{t!r},{s!r},{r!r}\n" for i, t, s, r in result.loss_rows))
        (out / "metrics.log").write_text(
            "".join(line + "\n" for line in result.metric_lines))
    return result


def infer(image: np.ndarray, store: ParamStore, cfg: TrainConfig):
    """Single-image test path: main branch only, batchnorm on running stats,
    full image padded/cropped inside the backbone. Returns (coarse, refined)."""
    coarse, refined, _ = pipeline.forward_refine(
        image, store, cfg, mode="infer", update_running=False)
    return coarse, refined


def infer_from_checkpoint(image: np.ndarray, ck: checkpoint.Checkpoint):
    tensor.set_precision(ck.config.precision)
    return infer(image, ck.store, ck.config)
