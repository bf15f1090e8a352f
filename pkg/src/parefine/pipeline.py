"""Single-branch composite: backbone -> filter generation -> refinement.

Shared by the training branches and by inference. When the adaptive-filter
head is disabled (ablation), the refined map is the coarse map itself and
the backward path collapses accordingly.
"""

import numpy as np

from . import backbone, mrsg


def forward_refine(x: np.ndarray, store, cfg, mode: str, update_running: bool):
    """Returns (coarse, refined, cache) for a batch or a single image."""
    ucfg = cfg.unet_config()
    coarse, c_unet = backbone.unet_forward(x, store, ucfg, mode, update_running)
    if not cfg.use_pa:
        return coarse, coarse, (c_unet, None, None)
    bank, c_mrsg = mrsg.mrsg_assemble(coarse, cfg.d_filter, store, mode, update_running)
    refined, c_apply = mrsg.apply_pa_filters(coarse, bank, normalize=cfg.pa_normalize)
    return coarse, refined, (c_unet, c_mrsg, c_apply)


def backward_refine(d_refined: np.ndarray, cache, store) -> np.ndarray:
    """Grad of some scalar w.r.t. the refined map, pushed back to the input.
    Parameter grads accumulate into the store."""
    c_unet, c_mrsg, c_apply = cache
    if c_mrsg is None:
        return backbone.unet_backward(d_refined, c_unet, store)
    d_coarse, d_bank = mrsg.apply_pa_filters_backward(d_refined, c_apply)
    d_coarse = d_coarse + mrsg.mrsg_assemble_backward(d_bank, c_mrsg, store)
    return backbone.unet_backward(d_coarse, c_unet, store)
