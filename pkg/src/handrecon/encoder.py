"""Per-view image-to-token classifier.

A small conv2d trunk turns a silhouette crop into a feature map. Every voxel
of a coarse wrist-centred grid is projected into the crop and picks up the
feature under it by bilinear interpolation; two conv3d heads (hand, object)
then map the lifted volume to a distribution over codebook indices per token.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .codec import CodecModel, TokenGrid
from .geometry import CameraModel, RigidTransform
from .nn import Sequential, Tensor
from .nn import checkpoint
from .nn import layers as L
from .nn import tensor as T
from .nn.optim import AdamState, adam_step
from .observation import ViewObservation

log = logging.getLogger(__name__)

CLASSES = ("hand", "object")
PROB_EPS = 1e-12
W_EMPTY = 0.25
W_OTHER = 0.75


class ProjectionError(ValueError):
    """No voxel of the grid lands inside the image."""


@dataclass(frozen=True, eq=False)
class DistributionGrid:
    probs: np.ndarray  # (d, d, d, C)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 4 or not (p.shape[0] == p.shape[1] == p.shape[2]):
            raise ValueError(f"distribution grid must be d x d x d x C, got {p.shape}")
        if p.size and (p.min() < 0 or p.max() > 1 + 1e-9):
            raise ValueError("probabilities must lie in [0, 1]")
        if p.size and np.abs(p.sum(axis=-1) - 1).max() > 1e-6:
            raise ValueError("per-token probabilities must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def resolution(self) -> int:
        return self.probs.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.probs.shape[-1]

    def argmax(self) -> np.ndarray:
        return np.argmax(self.probs, axis=-1)


@dataclass(frozen=True)
class EncoderConfig:
    crop_size: int = 64
    trunk_channels: tuple[int, int, int] = (16, 32, 32)
    features: int = 32
    head_channels: int = 32
    lift_resolution: int = 8
    token_resolution: int = 4
    extent: float = 0.24
    learning_rate: float = 0.002
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    w_empty: float = W_EMPTY
    w_other: float = W_OTHER

    def __post_init__(self):
        if self.lift_resolution != 2 * self.token_resolution:
            raise ValueError("lift resolution must be twice the token resolution")

    @property
    def feature_size(self) -> int:
        return self.crop_size // 4


POSITION_CHANNELS = 4  # wrist-frame xyz and relative camera depth


def trunk_specs(cfg: EncoderConfig) -> list[L.LayerSpec]:
    c1, c2, c3 = cfg.trunk_channels
    return [L.conv2d(3, c1, 4, 2, 1), L.relu(), L.conv2d(c1, c2, 4, 2, 1), L.relu(),
            L.conv2d(c2, c3, 3, 1, 1), L.relu(), L.conv2d(c3, cfg.features, 3, 1, 1), L.relu()]


def head_specs(cfg: EncoderConfig, codebook_size: int) -> list[L.LayerSpec]:
    h = cfg.head_channels
    return [L.conv3d(cfg.features + POSITION_CHANNELS, h, 3, 1, 1), L.group_norm(h), L.relu(),
            L.conv3d(h, h, 2, 2), L.relu(), L.conv3d(h, codebook_size, 1)]


@dataclass(eq=False)
class EncoderModel:
    config: EncoderConfig
    trunk: Sequential
    heads: dict[str, Sequential]
    codebook_sizes: dict[str, int]
    empty_index: dict[str, int]
    log: list[dict] = field(default_factory=list)

    @classmethod
    def create(cls, config: EncoderConfig, codebook_sizes: dict[str, int],
               empty_index: dict[str, int]) -> "EncoderModel":
        rng = np.random.default_rng(config.seed)
        trunk = Sequential.build(trunk_specs(config), rng)
        heads = {c: Sequential.build(head_specs(config, codebook_sizes[c]), rng) for c in CLASSES}
        return cls(config, trunk, heads, dict(codebook_sizes), dict(empty_index))

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.trunk.named_parameters("trunk."))
        for c in CLASSES:
            out.update(self.heads[c].named_parameters(f"{c}."))
        return out

    def class_weights(self, role: str) -> np.ndarray:
        w = np.full(self.codebook_sizes[role], self.config.w_other)
        w[self.empty_index[role]] = self.config.w_empty
        return w


def lift_weights(camera: CameraModel, wrist_pose: RigidTransform, resolution: int, extent: float,
                 feature_hw: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear sampling matrix (d^3, h*w) plus the voxel centres and their camera depths.

    Voxel centres are ordered x-major like ``TSDFGrid.values``. A voxel that
    projects outside the image (or lies behind the camera) gets an all-zero
    row; inside the image, sample positions are clamped to the outermost
    feature-cell centres.
    """
    fh, fw = feature_hw
    vs = extent / resolution
    ax = (np.arange(resolution) + 0.5) * vs - extent / 2
    local = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    world = wrist_pose.apply(local)
    px, valid = camera.project(world)
    depth = camera.extrinsic.apply(world)[:, 2]
    w_img, h_img = camera.image_size
    inside = valid & (px[:, 0] >= 0) & (px[:, 0] < w_img) & (px[:, 1] >= 0) & (px[:, 1] < h_img)
    if not inside.any():
        raise ProjectionError("no voxel projects into the image; wrist pose inconsistent with the camera")
    # continuous feature coordinates: cell (u, v) centre sits at integer (u, v)
    fx = np.clip(np.where(inside, px[:, 0], 0.0) * fw / w_img - 0.5, 0.0, fw - 1.0)
    fy = np.clip(np.where(inside, px[:, 1], 0.0) * fh / h_img - 0.5, 0.0, fh - 1.0)
    x0 = np.minimum(np.floor(fx).astype(int), fw - 2) if fw > 1 else np.zeros(len(fx), int)
    y0 = np.minimum(np.floor(fy).astype(int), fh - 2) if fh > 1 else np.zeros(len(fy), int)
    ax_, ay_ = fx - x0, fy - y0
    wmat = np.zeros((len(local), fh * fw))
    rows = np.arange(len(local))
    for dy, dx, wt in ((0, 0, (1 - ay_) * (1 - ax_)), (0, 1, (1 - ay_) * ax_),
                       (1, 0, ay_ * (1 - ax_)), (1, 1, ay_ * ax_)):
        yy = np.minimum(y0 + dy, fh - 1)
        xx = np.minimum(x0 + dx, fw - 1)
        np.add.at(wmat, (rows, yy * fw + xx), wt * inside)
    return wmat, local, depth


def build_feature_grid(obs: ViewObservation, features: np.ndarray | Tensor, resolution: int,
                       extent: float = 0.24) -> Tensor:
    """Lift an (F, h, w) feature map into a (d^3, F) voxel feature tensor."""
    feats = T.as_tensor(features)
    f, fh, fw = feats.shape
    wmat, _, _ = lift_weights(obs.camera, obs.wrist_pose, resolution, extent, (fh, fw))
    flat = T.transpose(T.reshape(feats, (f, fh * fw)), (1, 0))
    return T.matmul(Tensor(wmat.astype(feats.dtype)), flat)


def _position_channels(obs: ViewObservation, resolution: int, extent: float) -> np.ndarray:
    """(4, d, d, d): wrist-frame coordinates scaled to [-1, 1] and depth relative to the wrist."""
    _, local, depth = lift_weights(obs.camera, obs.wrist_pose, resolution, extent, (2, 2))
    wrist_depth = obs.camera.extrinsic.apply(obs.wrist_pose.translation[None])[0, 2]
    pos = np.column_stack([local / (extent / 2), (depth - wrist_depth) / (extent / 2)])
    return pos.T.reshape(POSITION_CHANNELS, resolution, resolution, resolution)


def _lifted_batch(model: EncoderModel, observations: list[ViewObservation]) -> Tensor:
    cfg = model.config
    d = cfg.lift_resolution
    images = np.stack([o.image for o in observations]).astype(np.float32)
    fmap = model.trunk(Tensor(images))  # (N, F, h, w)
    n, f, fh, fw = fmap.shape
    wm = np.stack([lift_weights(o.camera, o.wrist_pose, d, cfg.extent, (fh, fw))[0] for o in observations])
    flat = T.transpose(T.reshape(fmap, (n, f, fh * fw)), (0, 2, 1))  # (N, hw, F)
    lifted = T.matmul(Tensor(wm.astype(np.float32)), flat)  # (N, d^3, F)
    grid = T.reshape(T.transpose(lifted, (0, 2, 1)), (n, f, d, d, d))
    pos = np.stack([_position_channels(o, d, cfg.extent) for o in observations]).astype(np.float32)
    return T.concat([grid, Tensor(pos)], axis=1)


def _logits(model: EncoderModel, observations: list[ViewObservation]) -> dict[str, Tensor]:
    x = _lifted_batch(model, observations)
    return {c: model.heads[c](x) for c in CLASSES}


def predict_distribution(model: EncoderModel, obs: ViewObservation) -> tuple[DistributionGrid, DistributionGrid]:
    """(P_H, P_O) for one view."""
    logits = _logits(model, [obs])
    out = []
    for c in CLASSES:
        lg = logits[c].data[0].astype(np.float64)  # (C, d, d, d)
        p = np.exp(lg - lg.max(axis=0, keepdims=True))
        p /= p.sum(axis=0, keepdims=True)
        out.append(DistributionGrid(np.moveaxis(p, 0, -1)))
    return out[0], out[1]


def weighted_ce_loss(p: DistributionGrid, gt: TokenGrid, weights) -> tuple[float, int]:
    """Weighted cross-entropy averaged over tokens; returns (loss, saturation count)."""
    if p.resolution != gt.resolution or p.codebook_size != gt.codebook_size:
        raise ValueError(f"distribution grid {p.probs.shape} does not match token grid "
                         f"{gt.indices.shape} with C={gt.codebook_size}")
    w = np.asarray(weights, dtype=np.float64)
    idx = gt.indices.reshape(-1)
    pc = p.probs.reshape(-1, p.codebook_size)[np.arange(idx.size), idx]
    saturated = int((pc < PROB_EPS).sum())
    return float(-(w[idx] * np.log(np.maximum(pc, PROB_EPS))).mean()), saturated


def weighted_ce_from_logits(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Differentiable twin of :func:`weighted_ce_loss` on (N, C, d, d, d) logits."""
    logp = T.log_softmax(logits, axis=1)
    n, c = logits.shape[:2]
    flat = T.reshape(T.transpose(logp, (0, 2, 3, 4, 1)), (-1, c))
    tgt = np.asarray(targets).reshape(-1)
    onehot = np.zeros((tgt.size, c), dtype=logits.dtype)
    onehot[np.arange(tgt.size), tgt] = np.asarray(weights)[tgt]
    return T.tsum(flat * Tensor(onehot)) * (-1.0 / tgt.size)


def _params_snapshot(codecs: dict[str, CodecModel]) -> dict[str, bytes]:
    return {f"{c}.{k}": v.data.tobytes() for c, m in codecs.items() for k, v in m.parameters().items()}


def train_encoder(dataset: list[tuple[ViewObservation, TokenGrid, TokenGrid]], codecs: dict[str, CodecModel],
                  config: EncoderConfig = EncoderConfig()) -> EncoderModel:
    """Fit the trunk and both heads; codecs only supply sizes and empty indices and stay untouched."""
    if not dataset:
        raise ValueError("empty encoder training set")
    if set(codecs) != set(CLASSES):
        raise ValueError(f"need codecs for both classes {CLASSES}, got {sorted(codecs)}")
    for _, th, to in dataset:
        if th is None or to is None:
            raise ValueError("every training sample needs ground-truth tokens for both hand and object")
    before = _params_snapshot(codecs)
    model = EncoderModel.create(config, {c: codecs[c].config.codebook_size for c in CLASSES},
                                {c: codecs[c].empty_index for c in CLASSES})
    weights = {c: model.class_weights(c) for c in CLASSES}
    params = model.parameters()
    state = AdamState(config.learning_rate)
    rng = np.random.default_rng(config.seed + 1)
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        total, batches = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            batch = [dataset[j] for j in order[i:i + config.batch_size]]
            for p in params.values():
                p.zero_grad()
            logits = _logits(model, [b[0] for b in batch])
            loss = None
            for k, c in enumerate(CLASSES):
                tgt = np.stack([b[1 + k].indices for b in batch])
                term = weighted_ce_from_logits(logits[c], tgt, weights[c])
                loss = term if loss is None else loss + term
            loss.backward()
            adam_step(params, state)
            total += float(loss.data)
            batches += 1
        model.log.append({"epoch": epoch, "loss": total / batches})
        log.info("encoder epoch %d loss %.4f", epoch, total / batches)
    if _params_snapshot(codecs) != before:
        raise RuntimeError("codec parameters changed during encoder training")
    return model


def save_encoder(model: EncoderModel, path: str | Path) -> None:
    meta = {"kind": "encoder", "config": asdict(model.config), "codebook_sizes": model.codebook_sizes,
            "empty_index": model.empty_index}
    checkpoint.save(path, {k: v.data for k, v in model.parameters().items()}, meta=meta)


def load_encoder(path: str | Path) -> EncoderModel:
    params, sections = checkpoint.load(path)
    meta = checkpoint.load_meta(sections)
    if meta.get("kind") != "encoder":
        raise checkpoint.CheckpointError(f"{path}: not an encoder checkpoint")
    cfg = EncoderConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["config"].items()})
    model = EncoderModel.create(cfg, meta["codebook_sizes"], meta["empty_index"])
    for name, p in model.parameters().items():
        if name not in params or params[name].shape != p.shape:
            raise checkpoint.CheckpointError(f"{path}: parameter {name} missing or mis-shaped")
        p.data = params[name]
    return model
