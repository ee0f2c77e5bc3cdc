"""Image and text encoders.

The image side is a small strided conv stack (no pretrained backbone; data is
synthetic and desk-scale). The text side is a pair of learnable embedding
tables plus a two-layer projection that turns an (attribute, object) label
into a vector matching the feature-map channel width, so the anchor/text
cosine similarities are well formed.
"""

import math

import numpy as np
import torch
from torch import nn

from .errors import ValidationError


def images_to_tensor(images, device="cpu"):
    """(B,H,W,3) or (H,W,3) uint8/float array -> float32 NCHW tensor in [0,1]."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValidationError(f"expected (B,H,W,3) images, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    return t.permute(0, 3, 1, 2).to(device)


def _group_norm(width):
    groups = 8
    while groups > 1 and width % groups:
        groups //= 2
    return nn.GroupNorm(groups, width)


class ImageEncoder(nn.Module):
    """Conv stack with total stride 2^k; output (B, C, H/s, W/s)."""

    def __init__(self, ecfg, image_size):
        super().__init__()
        if image_size % ecfg.stride:
            raise ValidationError(
                f"image size {image_size} not divisible by stride {ecfg.stride}")
        self.image_size = image_size
        self.stride = ecfg.stride
        self.channels = ecfg.channels
        n_down = int(round(math.log2(ecfg.stride)))
        widths = [min(ecfg.base_width * (2 ** k), ecfg.channels) for k in range(n_down - 1)]
        widths.append(ecfg.channels)
        layers, in_ch = [], 3
        for w in widths:
            layers += [nn.Conv2d(in_ch, w, 3, stride=2, padding=1), _group_norm(w), nn.ReLU()]
            in_ch = w
        self.stack = nn.Sequential(*layers)

    def forward(self, x):
        if x.ndim != 4 or x.shape[-2:] != (self.image_size, self.image_size):
            raise ValidationError(
                f"expected (B,3,{self.image_size},{self.image_size}) input, "
                f"got {tuple(x.shape)}")
        return self.stack(x)


class TextEncoder(nn.Module):
    """Learnable per-primitive tables + pair-projection FFN (2 linear layers)."""

    def __init__(self, num_attributes, num_objects, channels, hidden):
        super().__init__()
        self.attr_table = nn.Parameter(torch.randn(num_attributes, channels))
        self.obj_table = nn.Parameter(torch.randn(num_objects, channels))
        self.pair_mlp = nn.Sequential(
            nn.Linear(2 * channels, hidden), nn.ReLU(), nn.Linear(hidden, channels))

    def tables(self):
        """Semantic embedding tables (attributes i x C, objects j x C)."""
        return self.attr_table, self.obj_table

    def encode_pair(self, attr_idx, obj_idx, text_input="obj_attr"):
        attr_idx = torch.as_tensor(attr_idx, dtype=torch.long,
                                   device=self.attr_table.device)
        obj_idx = torch.as_tensor(obj_idx, dtype=torch.long,
                                  device=self.obj_table.device)
        squeeze = attr_idx.ndim == 0
        attr_idx, obj_idx = attr_idx.reshape(-1), obj_idx.reshape(-1)
        if attr_idx.numel() and (attr_idx.min() < 0 or attr_idx.max() >= len(self.attr_table)):
            raise ValidationError("attribute index out of range")
        if obj_idx.numel() and (obj_idx.min() < 0 or obj_idx.max() >= len(self.obj_table)):
            raise ValidationError("object index out of range")
        a = self.attr_table[attr_idx]
        if text_input == "obj":
            a = torch.zeros_like(a)  # object-name-only ablation: blank the attribute slot
        elif text_input != "obj_attr":
            raise ValidationError(f"unknown text_input {text_input!r}")
        out = self.pair_mlp(torch.cat([a, self.obj_table[obj_idx]], dim=-1))
        return out[0] if squeeze else out

    def projection_parameters(self):
        """The pair-projection layers; trained at a reduced rate during pretraining."""
        return list(self.pair_mlp.parameters())

    def table_parameters(self):
        return [self.attr_table, self.obj_table]
