"""Anchors, differentiable region pooling, the RPN head, top-r selection.

Anchor layout is a single feature level: one anchor set per stride cell,
|scales| x |ratios| boxes per cell, clipped to the image (clip, not discard,
so the anchor count stays grid-exact). Proposal boxes are anchors shifted by
predicted deltas; there is no box-regression supervision, the deltas learn
only through the pooled-feature losses, so pooling must be differentiable
w.r.t. the box coordinates as well as the feature map.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encoders import ImageEncoder, TextEncoder
from .errors import ValidationError

_DELTA_CLAMP = 4.0  # keeps exp(dw), exp(dh) bounded; divergence guard


def generate_anchors(image_size, stride, scales, ratios):
    """-> (n, 4) float64 boxes (x0, y0, x1, y1), n = grid * scales * ratios."""
    if image_size % stride:
        raise ValidationError(f"stride {stride} does not divide image size {image_size}")
    grid = image_size // stride
    boxes = []
    for gy in range(grid):
        cy = (gy + 0.5) * stride
        for gx in range(grid):
            cx = (gx + 0.5) * stride
            for s in scales:
                base = s * image_size
                for rho in ratios:
                    w = base / np.sqrt(rho)
                    h = base * np.sqrt(rho)
                    boxes.append((cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
    out = np.asarray(boxes, dtype=np.float64)
    return np.clip(out, 0.0, float(image_size))


def anchor_count(image_size, stride, scales, ratios):
    if image_size % stride:
        raise ValidationError(f"stride {stride} does not divide image size {image_size}")
    return (image_size // stride) ** 2 * len(scales) * len(ratios)


def _bilinear(fmap, u, v):
    """Sample fmap (B,C,Hf,Wf) at fractional coords u (x), v (y), each (B,M).

    Clamp-to-edge; floor indices are detached so gradients flow through the
    fractional offsets, i.e. through the box coordinates.
    """
    _, _, hf, wf = fmap.shape
    u = u.clamp(0.0, wf - 1.0)
    v = v.clamp(0.0, hf - 1.0)
    u0 = u.floor().clamp(max=wf - 2) if wf > 1 else torch.zeros_like(u)
    v0 = v.floor().clamp(max=hf - 2) if hf > 1 else torch.zeros_like(v)
    tu = (u - u0).unsqueeze(-1)
    tv = (v - v0).unsqueeze(-1)
    x0 = u0.long()
    y0 = v0.long()
    x1 = (x0 + 1).clamp(max=wf - 1)
    y1 = (y0 + 1).clamp(max=hf - 1)
    bi = torch.arange(fmap.shape[0], device=fmap.device).unsqueeze(1)
    f00 = fmap[bi, :, y0, x0]
    f01 = fmap[bi, :, y0, x1]
    f10 = fmap[bi, :, y1, x0]
    f11 = fmap[bi, :, y1, x1]
    top = f00 * (1 - tu) + f01 * tu
    bot = f10 * (1 - tu) + f11 * tu
    return top * (1 - tv) + bot * tv  # (B, M, C)


def pool_region_features(fmap, boxes, stride, grid=3):
    """Average of a grid x grid pattern of bilinear samples inside each box.

    fmap: (B, C, Hf, Wf); boxes: (B, k, 4) or (k, 4) in input-image pixels.
    Returns (B, k, C). Feature cell (i, j) is treated as centered at
    ((j + 0.5) * stride, (i + 0.5) * stride). Zero-area boxes degenerate to a
    single center sample, which the averaging handles with no special case.
    """
    if fmap.ndim != 4:
        raise ValidationError(f"fmap must be (B,C,H,W), got {tuple(fmap.shape)}")
    b = fmap.shape[0]
    boxes = torch.as_tensor(boxes, dtype=fmap.dtype, device=fmap.device)
    if boxes.ndim == 2:
        boxes = boxes.unsqueeze(0).expand(b, -1, -1)
    if boxes.ndim != 3 or boxes.shape[0] != b or boxes.shape[-1] != 4:
        raise ValidationError(f"boxes must be (B,k,4), got {tuple(boxes.shape)}")
    k = boxes.shape[1]
    x0, y0, x1, y1 = boxes.unbind(-1)
    offs = (torch.arange(grid, dtype=fmap.dtype, device=fmap.device) + 0.5) / grid
    # sample points: (B, k, grid) per axis, then the grid x grid outer product
    px = x0.unsqueeze(-1) + offs * (x1 - x0).unsqueeze(-1)
    py = y0.unsqueeze(-1) + offs * (y1 - y0).unsqueeze(-1)
    px = px.unsqueeze(-2).expand(b, k, grid, grid)
    py = py.unsqueeze(-1).expand(b, k, grid, grid)
    u = (px / stride - 0.5).reshape(b, k * grid * grid)
    v = (py / stride - 0.5).reshape(b, k * grid * grid)
    samples = _bilinear(fmap, u, v)
    return samples.reshape(b, k, grid * grid, -1).mean(dim=2)


OBJ_PRIOR_BIAS = 0.5


class RpnHead(nn.Module):
    """Per-anchor objectness logit + 4 box deltas from a tiny conv head.

    The final conv is zero-initialized except for a positive bias on the
    objectness channels: at init, proposals coincide with anchors and every
    objectness is sigmoid(OBJ_PRIOR_BIAS). The prior matters because the
    objectness targets follow the text-similarity scores, whose drift
    direction under training is otherwise decided by init noise; starting
    above 1/2 pins the high-score basin for every seed.
    """

    def __init__(self, channels, anchors_per_cell):
        super().__init__()
        self.anchors_per_cell = anchors_per_cell
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.head = nn.Conv2d(channels, anchors_per_cell * 5, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        with torch.no_grad():
            # channel layout is (anchor, component) with component 0 = objectness
            self.head.bias[0::5] = OBJ_PRIOR_BIAS

    def forward(self, fmap):
        """-> objectness logits (B, n), deltas (B, n, 4); n in anchor order."""
        b, _, hf, wf = fmap.shape
        out = self.head(torch.relu(self.conv(fmap)))
        out = out.reshape(b, self.anchors_per_cell, 5, hf, wf)
        out = out.permute(0, 3, 4, 1, 2).reshape(b, hf * wf * self.anchors_per_cell, 5)
        return out[..., 0], out[..., 1:]


def apply_deltas(anchors, deltas, image_size):
    """Center-offset / log-size shift of anchor boxes, clipped to the image."""
    anchors = torch.as_tensor(anchors, dtype=deltas.dtype, device=deltas.device)
    w = anchors[:, 2] - anchors[:, 0]
    h = anchors[:, 3] - anchors[:, 1]
    cx = anchors[:, 0] + 0.5 * w
    cy = anchors[:, 1] + 0.5 * h
    d = deltas.clamp(-_DELTA_CLAMP, _DELTA_CLAMP)
    ncx = cx + d[..., 0] * w
    ncy = cy + d[..., 1] * h
    nw = w * torch.exp(d[..., 2])
    nh = h * torch.exp(d[..., 3])
    out = torch.stack([ncx - nw / 2, ncy - nh / 2, ncx + nw / 2, ncy + nh / 2], dim=-1)
    return out.clamp(0.0, float(image_size))


@dataclass
class ProposalSet:
    boxes: torch.Tensor  # (B, n, 4)
    objectness: torch.Tensor  # (B, n) in (0, 1)
    features: torch.Tensor  # (B, n, C)
    anchor_features: torch.Tensor  # (B, n, C)


def rpn_forward(fmap, anchors, rpn: RpnHead, stride, image_size) -> ProposalSet:
    logits, deltas = rpn(fmap)
    n = anchors.shape[0]
    if logits.shape[1] != n:
        raise ValidationError(
            f"RPN produced {logits.shape[1]} entries for {n} anchors; "
            f"feature grid and anchor grid disagree")
    boxes = apply_deltas(anchors, deltas, image_size)
    feats = pool_region_features(fmap, boxes, stride)
    anc = torch.as_tensor(anchors, dtype=fmap.dtype, device=fmap.device)
    anc_feats = pool_region_features(fmap, anc, stride)
    return ProposalSet(boxes=boxes, objectness=torch.sigmoid(logits),
                       features=feats, anchor_features=anc_feats)


class LfeModel(nn.Module):
    """Localized feature extractor: image encoder + RPN + the text side.

    The text encoder lives here so one checkpoint carries everything the
    downstream classifier fine-tunes as a unit.
    """

    def __init__(self, cfg):
        super().__init__()
        self.image_size = cfg.dataset.image_size
        self.stride = cfg.encoder.stride
        self.image_encoder = ImageEncoder(cfg.encoder, cfg.dataset.image_size)
        self.text_encoder = TextEncoder(cfg.dataset.num_attributes,
                                        cfg.dataset.num_objects,
                                        cfg.encoder.channels,
                                        cfg.encoder.text_hidden)
        per_cell = len(cfg.lfe.scales) * len(cfg.lfe.ratios)
        self.rpn = RpnHead(cfg.encoder.channels, per_cell)
        self.anchors = generate_anchors(cfg.dataset.image_size, cfg.encoder.stride,
                                        cfg.lfe.scales, cfg.lfe.ratios)

    @property
    def num_anchors(self):
        return self.anchors.shape[0]

    def forward(self, images):
        """images: (B,3,H,W) in [0,1] -> (feature map, ProposalSet)."""
        fmap = self.image_encoder(images)
        props = rpn_forward(fmap, self.anchors, self.rpn, self.stride, self.image_size)
        return fmap, props


def extract_top_proposals(objectness, features, r, boxes=None):
    """Top-r by objectness, ties to the lower anchor index (stable sort).

    objectness (n,) or (B, n); features (n, C) or (B, n, C).
    Returns (features_r, scores_r[, boxes_r]) sorted descending.
    """
    single = objectness.ndim == 1
    obj = objectness.unsqueeze(0) if single else objectness
    feats = features.unsqueeze(0) if single else features
    n = obj.shape[-1]
    if not 1 <= r <= n:
        raise ValidationError(f"r={r} outside [1, {n}]")
    scores, idx = torch.sort(obj, dim=-1, descending=True, stable=True)
    idx = idx[:, :r]
    scores = scores[:, :r]
    gathered = torch.gather(feats, 1, idx.unsqueeze(-1).expand(-1, -1, feats.shape[-1]))
    out = [gathered, scores]
    if boxes is not None:
        bx = boxes.unsqueeze(0) if single else boxes
        out.append(torch.gather(bx, 1, idx.unsqueeze(-1).expand(-1, -1, 4)))
    if single:
        out = [t.squeeze(0) for t in out]
    return tuple(out)
