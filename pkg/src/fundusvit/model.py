"""Dual-head vision-transformer classifier.

An input image is cut into P x P patches, linearly embedded, prepended with
a learnable class token, offset by a learnable position embedding, and run
through a stack of pre-norm transformer encoder blocks. Two heads each
produce a 2-way probability pair:

* the class-token head: a linear map on the encoder's class-token output;
* the patch-aggregation head: a learnable softmax-weighted sum of the
  encoder's patch-token outputs, fed to a final linear map.

Test-time prediction is the mean of the two heads' positive-class
probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (ShapeError, Tensor, add, concat, gelu, layer_norm,
                       matmul, mul, narrow, no_grad, relu, softmax, transpose)

LAYER_NORM_EPS = 1e-5
INIT_STD = 0.02

_ACTIVATIONS = {"relu": relu, "gelu": gelu}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; every parameter shape derives from these."""

    height: int = 64
    width: int = 64
    patch: int = 16
    dim: int = 64
    depth: int = 4
    heads: int = 4
    agg_hidden: int = 64
    activation: str = "relu"
    mlp_hidden: int | None = None

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ShapeError(f"image {self.height}x{self.width} not divisible by "
                             f"patch {self.patch}")
        if self.dim % self.heads:
            raise ShapeError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_features(self) -> int:
        return 3 * self.patch * self.patch

    @property
    def mlp_width(self) -> int:
        return self.mlp_hidden if self.mlp_hidden is not None else 4 * self.dim

    @classmethod
    def full_resolution(cls, **overrides) -> "ModelConfig":
        """512x512 inputs with 16-pixel patches (1024 patch tokens)."""
        base = dict(height=512, width=512, patch=16)
        base.update(overrides)
        return cls(**base)

    def param_count(self) -> int:
        d, m, a = self.dim, self.mlp_width, self.agg_hidden
        block = (2 * d                      # ln1
                 + 4 * (d * d + d)          # q, k, v, out projections
                 + 2 * d                    # ln2
                 + d * m + m + m * d + d)   # mlp
        return (self.patch_features * d + d         # patch projection
                + d                                  # class token
                + (self.n_patches + 1) * d           # position table
                + self.depth * block
                + d * 2 + 2                          # class-token head
                + d * a + a + 2 * a                  # agg proj1 + its norm
                + a + 1 + 2                          # agg proj2 + scalar norm
                + d * 2 + 2)                         # final fc on aggregated feature


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """Flatten an HxWx3 image into an N x (3 P^2) matrix.

    Row k is patch k in row-major patch order; within a patch, values are
    laid out (row, column, channel) row-major, so the three channels of a
    pixel stay adjacent. ``unpatchify`` inverts this exactly.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected an HxWx3 image, got shape {image.shape}")
    h, w, _ = image.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    tiles = image.reshape(gh, patch, gw, patch, 3).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(gh * gw, 3 * patch * patch)


def unpatchify(rows: np.ndarray, height: int, width: int, patch: int) -> np.ndarray:
    rows = np.asarray(rows)
    gh, gw = height // patch, width // patch
    if rows.shape != (gh * gw, 3 * patch * patch):
        raise ShapeError(f"expected {(gh * gw, 3 * patch * patch)}, got {rows.shape}")
    tiles = rows.reshape(gh, gw, patch, patch, 3).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(height, width, 3)


@dataclass
class AggregationHead:
    """Learnable patch-weighting head: two projections, each followed by a
    layer norm and ReLU, then a softmax over patches.

    The second norm acts across the N per-patch scores (scalar gain/bias);
    normalizing each single-element score vector would pin every score to
    zero and freeze the weights at uniform.
    """

    proj1_w: Tensor
    proj1_b: Tensor
    norm1_gain: Tensor
    norm1_bias: Tensor
    proj2_w: Tensor
    proj2_b: Tensor
    norm2_gain: Tensor
    norm2_bias: Tensor
    eps: float = LAYER_NORM_EPS


def aggregate_patches(features: Tensor, head: AggregationHead) -> tuple[Tensor, Tensor]:
    """Weighted sum of patch-token features.

    Returns ``(aggregated, weights)``: a (1, D) convex combination of the
    feature rows and the (N, 1) nonnegative weights that produced it
    (summing to 1).
    """
    if features.ndim != 2 or features.shape[0] == 0:
        raise ShapeError(f"expected a nonempty N x D feature matrix, got {features.shape}")
    s = add(matmul(features, head.proj1_w), head.proj1_b)
    s = relu(layer_norm(s, head.norm1_gain, head.norm1_bias, head.eps))
    s = add(matmul(s, head.proj2_w), head.proj2_b)
    s = transpose(s)  # (1, N): normalize the score distribution across patches
    s = relu(layer_norm(s, head.norm2_gain, head.norm2_bias, head.eps))
    w = softmax(s, axis=1)
    aggregated = matmul(w, features)
    return aggregated, transpose(w)


@dataclass
class HeadOutputs:
    """Per-image outputs: two probability pairs and the patch weights."""

    p_cls: Tensor        # (1, 2) class-token head probabilities
    p_agg: Tensor        # (1, 2) aggregation head probabilities
    patch_weights: Tensor  # (N, 1), nonnegative, sums to 1

    @property
    def positive_cls(self) -> float:
        return float(self.p_cls.data[0, 1])

    @property
    def positive_agg(self) -> float:
        return float(self.p_agg.data[0, 1])


def average_prediction(outputs: HeadOutputs) -> float:
    """Test-time prediction: mean of the two heads' positive probabilities."""
    return 0.5 * (outputs.positive_cls + outputs.positive_agg)


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within 2 std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class DualHeadViT:
    """The full classifier; class index 1 is the positive class.

    Parameters live in an ordered name -> Tensor map (the checkpoint
    manifest order). Forward runs one image at a time; there are no
    cross-sample operations, so per-sample results are independent of any
    batching done by the caller.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x1217)))
        self.params: dict[str, Tensor] = {}
        for name, shape in self.parameter_shapes(config):
            if name.endswith(".gain"):
                data = np.ones(shape)
            elif name.endswith(".bias"):
                data = np.zeros(shape)
            else:  # projection weights, the class token and the position table
                data = _trunc_normal(rng, shape, INIT_STD)
            self.params[name] = Tensor(data.astype(self.dtype), requires_grad=True)
        p = self.params
        self.agg_head = AggregationHead(
            p["agg.proj1.weight"], p["agg.proj1.bias"],
            p["agg.norm1.gain"], p["agg.norm1.bias"],
            p["agg.proj2.weight"], p["agg.proj2.bias"],
            p["agg.norm2.gain"], p["agg.norm2.bias"])

    @staticmethod
    def parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
        d, m, a = config.dim, config.mlp_width, config.agg_hidden
        shapes: list[tuple[str, tuple[int, ...]]] = [
            ("patch_proj.weight", (config.patch_features, d)),
            ("patch_proj.bias", (1, d)),
            ("cls_token", (1, d)),
            ("pos_embed", (config.n_patches + 1, d)),
        ]
        for i in range(config.depth):
            b = f"block{i}"
            shapes += [
                (f"{b}.ln1.gain", (d,)), (f"{b}.ln1.bias", (d,)),
                (f"{b}.attn.q.weight", (d, d)), (f"{b}.attn.q.bias", (1, d)),
                (f"{b}.attn.k.weight", (d, d)), (f"{b}.attn.k.bias", (1, d)),
                (f"{b}.attn.v.weight", (d, d)), (f"{b}.attn.v.bias", (1, d)),
                (f"{b}.attn.out.weight", (d, d)), (f"{b}.attn.out.bias", (1, d)),
                (f"{b}.ln2.gain", (d,)), (f"{b}.ln2.bias", (d,)),
                (f"{b}.mlp.fc1.weight", (d, m)), (f"{b}.mlp.fc1.bias", (1, m)),
                (f"{b}.mlp.fc2.weight", (m, d)), (f"{b}.mlp.fc2.bias", (1, d)),
            ]
        shapes += [
            ("mlp_head.weight", (d, 2)), ("mlp_head.bias", (1, 2)),
            ("agg.proj1.weight", (d, a)), ("agg.proj1.bias", (1, a)),
            ("agg.norm1.gain", (a,)), ("agg.norm1.bias", (a,)),
            ("agg.proj2.weight", (a, 1)), ("agg.proj2.bias", (1, 1)),
            ("agg.norm2.gain", (1,)), ("agg.norm2.bias", (1,)),
            ("final_fc.weight", (d, 2)), ("final_fc.bias", (1, 2)),
        ]
        return shapes

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_groups(self) -> dict[str, list[str]]:
        """Coarse grouping used by the gradient-flow check."""
        groups: dict[str, list[str]] = {}
        for name in self.params:
            if name.startswith(("block",)):
                key = name.split(".")[0]
            elif name.startswith("agg.") or name.startswith("final_fc."):
                key = "agg_head"
            elif name.startswith("mlp_head."):
                key = "mlp_head"
            else:
                key = name.split(".")[0]
            groups.setdefault(key, []).append(name)
        return groups

    def _attention(self, x: Tensor, block: str) -> Tensor:
        p = self.params
        cfg = self.config
        dh = cfg.dim // cfg.heads
        q = add(matmul(x, p[f"{block}.attn.q.weight"]), p[f"{block}.attn.q.bias"])
        k = add(matmul(x, p[f"{block}.attn.k.weight"]), p[f"{block}.attn.k.bias"])
        v = add(matmul(x, p[f"{block}.attn.v.weight"]), p[f"{block}.attn.v.bias"])
        heads = []
        for h in range(cfg.heads):
            qh = narrow(q, 1, h * dh, dh)
            kh = narrow(k, 1, h * dh, dh)
            vh = narrow(v, 1, h * dh, dh)
            scores = mul(matmul(qh, transpose(kh)), 1.0 / math.sqrt(dh))
            heads.append(matmul(softmax(scores, axis=1), vh))
        merged = concat(heads, axis=1)
        return add(matmul(merged, p[f"{block}.attn.out.weight"]),
                   p[f"{block}.attn.out.bias"])

    def _encoder(self, x: Tensor) -> Tensor:
        p = self.params
        act = _ACTIVATIONS[self.config.activation]
        for i in range(self.config.depth):
            b = f"block{i}"
            attended = self._attention(
                layer_norm(x, p[f"{b}.ln1.gain"], p[f"{b}.ln1.bias"], LAYER_NORM_EPS), b)
            x = add(x, attended)
            hidden = layer_norm(x, p[f"{b}.ln2.gain"], p[f"{b}.ln2.bias"], LAYER_NORM_EPS)
            hidden = act(add(matmul(hidden, p[f"{b}.mlp.fc1.weight"]),
                             p[f"{b}.mlp.fc1.bias"]))
            hidden = add(matmul(hidden, p[f"{b}.mlp.fc2.weight"]),
                         p[f"{b}.mlp.fc2.bias"])
            x = add(x, hidden)
        return x

    def forward(self, image: np.ndarray) -> HeadOutputs:
        """Run one image (HxWx3, values pre-scaled to [0, 1])."""
        cfg = self.config
        image = np.asarray(image)
        if image.shape != (cfg.height, cfg.width, 3):
            raise ShapeError(f"input shape {image.shape} does not match configured "
                             f"{(cfg.height, cfg.width, 3)}")
        p = self.params
        patches = Tensor(patchify(image.astype(self.dtype, copy=False), cfg.patch))
        x = add(matmul(patches, p["patch_proj.weight"]), p["patch_proj.bias"])
        x = concat([p["cls_token"], x], axis=0)
        x = add(x, p["pos_embed"])
        x = self._encoder(x)
        cls_out = narrow(x, 0, 0, 1)
        patch_out = narrow(x, 0, 1, cfg.n_patches)
        p_cls = softmax(add(matmul(cls_out, p["mlp_head.weight"]), p["mlp_head.bias"]),
                        axis=1)
        aggregated, weights = aggregate_patches(patch_out, self.agg_head)
        p_agg = softmax(add(matmul(aggregated, p["final_fc.weight"]), p["final_fc.bias"]),
                        axis=1)
        return HeadOutputs(p_cls, p_agg, weights)

    def predict(self, image: np.ndarray) -> float:
        """Positive-class probability: mean of the two heads."""
        with no_grad():
            out = self.forward(image)
        return average_prediction(out)
