"""Weakly supervised pretraining of the localized feature extractor.

Per image: the labeled pair's text embedding scores every anchor feature by
cosine similarity; the top-l anchors become binary pseudo-labels; a margin
contrastive term ties anchor features to their proposal features, and a BCE
term ties objectness to the (rescaled) similarity scores. No box supervision
anywhere. Label selection works on detached scores, but the BCE target stays
differentiable: that is the only gradient path into the text pair projection,
which is why its learning rate is restricted.
"""

import numpy as np
import torch

from .encoders import images_to_tensor
from .errors import DivergenceError, ValidationError
from .manifest import load_split_arrays
from .seeding import rng_for

_NORM_EPS = 1e-12
_PROB_EPS = 1e-7


def cosine_similarity(u, v, dim=-1):
    """Dot over norms along `dim`; any vector with norm < 1e-12 scores 0."""
    u = torch.as_tensor(u)
    v = torch.as_tensor(v)
    dtype = torch.promote_types(u.dtype, v.dtype)
    if not dtype.is_floating_point:
        dtype = torch.float64
    u, v = u.to(dtype), v.to(dtype)
    nu = torch.linalg.vector_norm(u, dim=dim)
    nv = torch.linalg.vector_norm(v, dim=dim)
    num = (u * v).sum(dim=dim)
    sim = num / (nu.clamp(min=_NORM_EPS) * nv.clamp(min=_NORM_EPS))
    return torch.where((nu < _NORM_EPS) | (nv < _NORM_EPS), torch.zeros_like(sim), sim)


def make_pseudo_labels(phi, l):
    """Binary vector marking the l largest scores; ties go to the lower index.

    Accepts (n,) or (B, n); numpy input -> int64 numpy output, torch input ->
    float tensor on the same device (no gradient; labels are targets).
    """
    was_numpy = not torch.is_tensor(phi)
    t = torch.as_tensor(np.asarray(phi) if was_numpy else phi)
    squeeze = t.ndim == 1
    if squeeze:
        t = t.unsqueeze(0)
    if t.ndim != 2:
        raise ValidationError(f"scores must be 1- or 2-dimensional, got shape {tuple(t.shape)}")
    n = t.shape[1]
    if not 0 <= l <= n:
        raise ValidationError(f"pseudo-label count {l} outside [0, {n}]")
    t = t.detach()
    y = torch.zeros_like(t, dtype=torch.float32)
    if l > 0:
        _, idx = torch.sort(t, dim=1, descending=True, stable=True)
        y.scatter_(1, idx[:, :l], 1.0)
    if squeeze:
        y = y.squeeze(0)
    return y.numpy().astype(np.int64) if was_numpy else y


def contrastive_loss(y, d, margin, distance_mode="cosine_similarity"):
    """Sum over entries of the margin contrastive objective.

    With d a cosine *similarity* (default), positives are pushed to d^2 >= m
    and negatives to d = 0, exactly the printed form. With d a cosine
    *distance* (1 - cos) the roles swap: positives shrink d, negatives are
    pushed past the margin. 1-D inputs -> scalar; (B, n) -> per-row sums (B,).
    """
    y = torch.as_tensor(y)
    d = torch.as_tensor(d)
    if y.shape != d.shape:
        raise ValidationError(f"label shape {tuple(y.shape)} != score shape {tuple(d.shape)}")
    y = y.to(d.dtype)
    sq = d * d
    hinge = torch.relu(torch.as_tensor(margin, dtype=d.dtype, device=d.device) - sq)
    if distance_mode == "cosine_similarity":
        terms = (1.0 - y) * sq + y * hinge
    elif distance_mode == "one_minus_cosine":
        terms = y * sq + (1.0 - y) * hinge
    else:
        raise ValidationError(f"unknown distance_mode {distance_mode!r}")
    return terms.sum(dim=-1)


def objectness_bce(objectness, phi):
    """Mean BCE between objectness and targets t = clamp((phi + 1) / 2, 0, 1).

    The target stays differentiable wherever phi is; probabilities are clamped
    1e-7 away from {0, 1} so the loss is always finite.
    """
    p = torch.as_tensor(objectness)
    phi = torch.as_tensor(phi)
    if p.shape != phi.shape:
        raise ValidationError(f"objectness shape {tuple(p.shape)} != score shape {tuple(phi.shape)}")
    t = ((phi.to(p.dtype) + 1.0) / 2.0).clamp(0.0, 1.0)
    p = p.clamp(_PROB_EPS, 1.0 - _PROB_EPS)
    return -(t * torch.log(p) + (1.0 - t) * torch.log1p(-p)).mean()


def total_pretrain_loss(l_con, l_bce, lcfg):
    return lcfg.alpha * l_con + lcfg.beta * l_bce


def pretrain_losses(model, images, attrs, objs, lcfg):
    """Forward pass + the three loss values for one batch.

    images: (B,3,H,W) tensor; attrs/objs: (B,) long tensors.
    Returns (total, l_con, l_bce, proposals).
    """
    _, props = model(images)
    f_txt = model.text_encoder.encode_pair(attrs, objs, text_input=lcfg.text_input)
    phi = cosine_similarity(f_txt.unsqueeze(1), props.anchor_features)
    y = make_pseudo_labels(phi, lcfg.num_pseudo_labels)
    d = cosine_similarity(props.anchor_features, props.features)
    if lcfg.distance_mode == "one_minus_cosine":
        d = 1.0 - d
    l_con = contrastive_loss(y, d, lcfg.margin, lcfg.distance_mode).mean()
    l_bce = objectness_bce(props.objectness, phi)
    return total_pretrain_loss(l_con, l_bce, lcfg), l_con, l_bce, props


def lfe_param_groups(model, lcfg):
    """Adam groups: everything at the base rate except the pair projection."""
    slow = model.text_encoder.projection_parameters()
    slow_ids = {id(p) for p in slow}
    base = [p for p in model.parameters() if id(p) not in slow_ids]
    return [{"params": base, "lr": lcfg.lr},
            {"params": slow, "lr": lcfg.lr * lcfg.text_lr_multiplier}]


def pretrain_lfe(root, manifest, model, cfg, device="cpu", log=None):
    """Full pretraining loop; returns the per-epoch loss history."""
    lcfg = cfg.lfe
    images, labels = load_split_arrays(root, manifest, "train")
    n = len(images)
    if n < lcfg.batch_size:
        raise ValidationError(
            f"train split has {n} images, smaller than batch size {lcfg.batch_size}")
    model.to(device).train()
    opt = torch.optim.Adam(lfe_param_groups(model, lcfg))
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=lcfg.lr_decay_every,
                                            gamma=lcfg.lr_decay)
    epochs = min(lcfg.epochs, lcfg.early_stop_epochs)
    history = []
    for epoch in range(epochs):
        order = rng_for(cfg.seed, "pretrain-order", epoch).permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n - lcfg.batch_size + 1, lcfg.batch_size):
            idx = order[start:start + lcfg.batch_size]
            x = images_to_tensor(images[idx], device)
            a = torch.as_tensor(labels[idx, 0], device=device)
            o = torch.as_tensor(labels[idx, 1], device=device)
            total, l_con, l_bce, _ = pretrain_losses(model, x, a, o, lcfg)
            if not torch.isfinite(total):
                raise DivergenceError("pretraining loss is not finite",
                                      epoch=epoch, batch=batches)
            opt.zero_grad()
            total.backward()
            opt.step()
            sums += [total.item(), l_con.item(), l_bce.item()]
            batches += 1
        sched.step()
        row = {"epoch": epoch, "l_total": sums[0] / batches, "l_con": sums[1] / batches,
               "l_bce": sums[2] / batches, "lr": opt.param_groups[0]["lr"]}
        history.append(row)
        if log:
            log(f"pretrain epoch {epoch}: total {row['l_total']:.4f} "
                f"(con {row['l_con']:.4f}, bce {row['l_bce']:.4f})")
    model.eval()
    return history
