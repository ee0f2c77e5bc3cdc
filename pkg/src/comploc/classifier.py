"""Composition classifier: proposal fusion, semantic refinement, prediction.

Top-r proposal features are fused by a learnable softmax-weighted average
into one vector, projected, and combined element-wise with each primitive's
projected semantic embedding (one refined row per attribute, one per object);
per-row decision networks produce the two softmax distributions. A
whole-image variant feeds a single global-average-pooled feature instead of
fused proposals and is the control for every localization claim.
"""

import torch
from torch import nn

from .encoders import images_to_tensor
from .errors import DivergenceError, ValidationError
from .manifest import load_split_arrays
from .regions import extract_top_proposals
from .seeding import rng_for

_LOG_EPS = 1e-12


def fuse_proposals(features, weights):
    """Softmax(weights)-weighted average over the proposal axis.

    features (r, C) or (B, r, C); weights raw length-r parameter vector.
    """
    t = torch.as_tensor(features)
    single = t.ndim == 2
    if single:
        t = t.unsqueeze(0)
    if t.shape[1] != weights.shape[0]:
        raise ValidationError(
            f"{t.shape[1]} proposals but {weights.shape[0]} fusion weights")
    w = torch.softmax(weights.to(t.dtype), dim=0)
    out = torch.einsum("r,brc->bc", w, t)
    return out.squeeze(0) if single else out


class TwoLayer(nn.Module):
    """Two fully connected layers with a ReLU between them."""

    def __init__(self, dim_in, dim_out):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim_in, dim_out), nn.ReLU(),
                                 nn.Linear(dim_out, dim_out))

    def forward(self, x):
        return self.net(x)


def refine(visual, semantic_rows, mode):
    """Combine one projected visual vector with every projected semantic row.

    visual (B, D) or (D,); semantic_rows (rows, D). Returns (B, rows, D) for
    multiply/add, (B, rows, 2D) for concat; leading dim squeezed for 1-D input.
    """
    v = torch.as_tensor(visual)
    s = torch.as_tensor(semantic_rows)
    single = v.ndim == 1
    if single:
        v = v.unsqueeze(0)
    if v.shape[-1] != s.shape[-1]:
        raise ValidationError(f"visual width {v.shape[-1]} != semantic width {s.shape[-1]}")
    vb = v.unsqueeze(1)  # (B, 1, D)
    sb = s.unsqueeze(0)  # (1, rows, D)
    if mode == "multiply":
        out = vb * sb
    elif mode == "add":
        out = vb + sb
    elif mode == "concat":
        rows = s.shape[0]
        out = torch.cat([vb.expand(-1, rows, -1), sb.expand(v.shape[0], -1, -1)], dim=-1)
    else:
        raise ValidationError(f"unknown refinement mode {mode!r}")
    return out.squeeze(0) if single else out


def classify(refined, decision):
    """Per-row scalar logits -> probabilities. refined (B, rows, D') or (rows, D')."""
    logits = decision(refined).squeeze(-1)
    return torch.softmax(logits, dim=-1), logits


def pair_score(attribute_probs, object_probs, candidate_pairs):
    """score(a, o) = log p_attr(a) + log p_obj(o) over the candidate pairs."""
    if not candidate_pairs:
        raise ValidationError("empty candidate pair set")
    ap = torch.as_tensor(attribute_probs).clamp(min=_LOG_EPS).log()
    op = torch.as_tensor(object_probs).clamp(min=_LOG_EPS).log()
    return {tuple(p): float(ap[p[0]] + op[p[1]]) for p in candidate_pairs}


class CompositionClassifier(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        c = cfg.encoder.channels
        d = cfg.cc.refined_dim or c
        self.mode = cfg.cc.refinement
        self.feature_source = cfg.cc.feature_source
        self.fusion_weights = nn.Parameter(torch.zeros(cfg.cc.top_r))
        self.fc_ah = TwoLayer(c, d)
        self.fc_as = TwoLayer(c, d)
        self.fc_oh = TwoLayer(c, d)
        self.fc_os = TwoLayer(c, d)
        d_dec = 2 * d if self.mode == "concat" else d
        self.dec_attr = nn.Sequential(nn.Linear(d_dec, d_dec), nn.ReLU(),
                                      nn.Linear(d_dec, 1))
        self.dec_obj = nn.Sequential(nn.Linear(d_dec, d_dec), nn.ReLU(),
                                     nn.Linear(d_dec, 1))

    def forward(self, visual_input, tables):
        """visual_input: fused features source — (B, r, C) top proposals when
        localized, (B, C) pooled feature when whole-image. tables: (attr i x C,
        obj j x C). Returns (attr_logits, obj_logits)."""
        if self.feature_source == "localized":
            f_all = fuse_proposals(visual_input, self.fusion_weights)
        else:
            f_all = visual_input
            if f_all.ndim != 2:
                raise ValidationError("whole-image variant expects (B, C) features")
        attr_table, obj_table = tables
        ref_a = refine(self.fc_ah(f_all), self.fc_as(attr_table), self.mode)
        ref_o = refine(self.fc_oh(f_all), self.fc_os(obj_table), self.mode)
        attr_logits = self.dec_attr(ref_a).squeeze(-1)
        obj_logits = self.dec_obj(ref_o).squeeze(-1)
        return attr_logits, obj_logits


def cc_visual_input(lfe_model, images, top_r, feature_source):
    """Run the extractor and shape its output for the classifier."""
    fmap, props = lfe_model(images)
    if feature_source == "whole_image":
        return fmap.mean(dim=(2, 3))
    feats, _ = extract_top_proposals(props.objectness, props.features, top_r)
    return feats


def predict_probs(lfe_model, cc_model, images, cfg):
    vis = cc_visual_input(lfe_model, images, cfg.cc.top_r, cfg.cc.feature_source)
    attr_logits, obj_logits = cc_model(vis, lfe_model.text_encoder.tables())
    return torch.softmax(attr_logits, dim=-1), torch.softmax(obj_logits, dim=-1)


def cc_loss(attr_logits, obj_logits, attrs, objs, loss_kind):
    if loss_kind == "cross_entropy":
        return (torch.nn.functional.cross_entropy(attr_logits, attrs)
                + torch.nn.functional.cross_entropy(obj_logits, objs))
    one_a = torch.nn.functional.one_hot(attrs, attr_logits.shape[1]).to(attr_logits.dtype)
    one_o = torch.nn.functional.one_hot(objs, obj_logits.shape[1]).to(obj_logits.dtype)
    bce = torch.nn.functional.binary_cross_entropy_with_logits
    return bce(attr_logits, one_a) + bce(obj_logits, one_o)


def train_cc(root, manifest, lfe_model, cc_model, cfg, device="cpu", log=None,
             epochs=None):
    """Classifier training with the extractor fine-tuning at its own low rate.

    lfe_lr == 0 freezes the extractor outright (ablation switch).
    """
    ccfg = cfg.cc
    images, labels = load_split_arrays(root, manifest, "train")
    n = len(images)
    if n < ccfg.batch_size:
        raise ValidationError(
            f"train split has {n} images, smaller than batch size {ccfg.batch_size}")
    lfe_model.to(device)
    cc_model.to(device).train()
    groups = [{"params": list(cc_model.parameters()), "lr": ccfg.lr}]
    frozen = ccfg.lfe_lr == 0.0
    if frozen:
        lfe_model.eval()
        for p in lfe_model.parameters():
            p.requires_grad_(False)
    else:
        lfe_model.train()
        groups.append({"params": list(lfe_model.parameters()), "lr": ccfg.lfe_lr})
    opt = torch.optim.Adam(groups)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=ccfg.lr_decay_every,
                                            gamma=ccfg.lr_decay)
    epochs = ccfg.epochs if epochs is None else epochs
    history = []
    for epoch in range(epochs):
        order = rng_for(cfg.seed, "cc-order", epoch).permutation(n)
        total, batches, correct, seen_count = 0.0, 0, 0, 0
        for start in range(0, n - ccfg.batch_size + 1, ccfg.batch_size):
            idx = order[start:start + ccfg.batch_size]
            x = images_to_tensor(images[idx], device)
            a = torch.as_tensor(labels[idx, 0], device=device)
            o = torch.as_tensor(labels[idx, 1], device=device)
            vis = cc_visual_input(lfe_model, x, ccfg.top_r, ccfg.feature_source)
            attr_logits, obj_logits = cc_model(vis, lfe_model.text_encoder.tables())
            loss = cc_loss(attr_logits, obj_logits, a, o, ccfg.loss)
            if not torch.isfinite(loss):
                raise DivergenceError("classifier loss is not finite",
                                      epoch=epoch, batch=batches)
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                hit = (attr_logits.argmax(1) == a) & (obj_logits.argmax(1) == o)
                correct += int(hit.sum())
                seen_count += len(idx)
            total += loss.item()
            batches += 1
        sched.step()
        row = {"epoch": epoch, "loss": total / batches,
               "train_pair_acc": correct / seen_count,
               "lr": opt.param_groups[0]["lr"]}
        history.append(row)
        if log:
            log(f"cc epoch {epoch}: loss {row['loss']:.4f} "
                f"train pair acc {row['train_pair_acc']:.3f}")
    if frozen:
        for p in lfe_model.parameters():
            p.requires_grad_(True)
    lfe_model.eval()
    cc_model.eval()
    return history
