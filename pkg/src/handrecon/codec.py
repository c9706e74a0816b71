"""Patch-wise vector-quantized T-SDF autoencoder.

A strictly patch-local conv3d encoder maps every ``patch**3`` block of a
normalised T-SDF to a continuous code ``z``; codes snap to the nearest
codebook entry and a conv/upconv decoder turns the token embeddings back into
a T-SDF. Values are handled in truncation units (T-SDF / truncation, so in
[-1, 1]) inside the network.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, TSDFGrid
from .nn import OptimizerState, Sequential, Tensor, sgd_step, stop_gradient
from .nn.optim import AdamState, adam_step
from .nn import checkpoint
from .nn import layers as L
from .nn import tensor as T

log = logging.getLogger(__name__)

COLLAPSE_FRACTION = 0.1


class VQLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class CodecConfig:
    resolution: int = 32
    patch: int = 8
    codebook_size: int = 64
    embed_dim: int = 32
    beta: float = 1.0
    encoder_channels: tuple[int, int] = (16, 32)
    decoder_channels: tuple[int, int, int] = (64, 32, 16)
    learning_rate: float = 0.001
    momentum: float = 0.9
    epochs: int = 40
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"  # or "sgd" (momentum SGD)

    def __post_init__(self):
        if self.codebook_size < 2:
            raise ValueError("codebook needs at least 2 entries")
        if self.patch != 8:
            # the encoder is three stride-2 stages
            raise ValueError("patch size must be 8")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.resolution % self.patch:
            raise ValueError(f"resolution {self.resolution} not divisible by patch size {self.patch}")

    @property
    def token_resolution(self) -> int:
        return self.resolution // self.patch


@dataclass(frozen=True, eq=False)
class TokenGrid:
    indices: np.ndarray  # (d, d, d) int
    codebook_size: int

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 3 or len(set(idx.shape)) != 1:
            raise ValueError(f"token grid must be a d x d x d cube, got {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= self.codebook_size):
            raise ValueError(f"token indices must lie in [0, {self.codebook_size})")
        idx = idx.astype(np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def resolution(self) -> int:
        return self.indices.shape[0]


def encoder_specs(cfg: CodecConfig) -> list[L.LayerSpec]:
    c1, c2 = cfg.encoder_channels
    return [L.conv3d(1, c1, 2, 2), L.relu(), L.conv3d(c1, c2, 2, 2), L.relu(), L.conv3d(c2, cfg.embed_dim, 2, 2)]


def decoder_specs(cfg: CodecConfig) -> list[L.LayerSpec]:
    c1, c2, c3 = cfg.decoder_channels
    return [
        L.conv3d(cfg.embed_dim, c1, 3, 1, 1), L.relu(),
        L.upconv3d(c1, c2, 2, 2), L.relu(),
        L.conv3d(c2, c2, 3, 1, 1), L.relu(),
        L.upconv3d(c2, c3, 2, 2), L.relu(),
        L.upconv3d(c3, 1, 2, 2),
    ]


@dataclass(eq=False)
class CodecModel:
    config: CodecConfig
    encoder: Sequential
    decoder: Sequential
    codebook: Tensor  # (C, S)
    role: str = "object"
    extent: float = 0.24
    truncation: float = 0.024
    empty_index: int = 0
    log: list[dict] = field(default_factory=list)

    @classmethod
    def create(cls, config: CodecConfig = CodecConfig(), role: str = "object", extent: float = 0.24,
               truncation: float | None = None) -> "CodecModel":
        rng = np.random.default_rng(config.seed)
        enc = Sequential.build(encoder_specs(config), rng)
        dec = Sequential.build(decoder_specs(config), rng)
        c = config.codebook_size
        book = Tensor(rng.uniform(-1.0 / c, 1.0 / c, (c, config.embed_dim)).astype(np.float32), requires_grad=True)
        return cls(config, enc, dec, book, role, extent, 0.1 * extent if truncation is None else truncation)

    @property
    def beta(self) -> float:
        return self.config.beta

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.encoder.named_parameters("encoder."))
        out.update(self.decoder.named_parameters("decoder."))
        out["codebook"] = self.codebook
        return out

    # -- building blocks ------------------------------------------------
    def encode_batch(self, s: np.ndarray | Tensor) -> Tensor:
        """(N, 1, D, D, D) normalised T-SDF -> (N, S, d, d, d) continuous codes."""
        return self.encoder(T.as_tensor(s))

    def decode_batch(self, e: Tensor) -> Tensor:
        """(N, S, d, d, d) embeddings -> (N, 1, D, D, D) normalised T-SDF (unclamped)."""
        return self.decoder(e)

    def lookup(self, indices: np.ndarray) -> Tensor:
        """(N, d, d, d) indices -> (N, S, d, d, d) codebook embeddings."""
        e = T.take_rows(self.codebook, indices)
        return T.transpose(e, (0, 4, 1, 2, 3))


def quantize(z: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Index of the nearest entry (Euclidean, lowest index on ties) for each row of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    entries = np.asarray(entries, dtype=np.float64)
    d2 = ((z[:, None, :] - entries[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1)


def _codes_to_rows(z: np.ndarray) -> np.ndarray:
    """(N, S, d, d, d) -> (N*d^3, S) in (n, x, y, z) order."""
    return np.moveaxis(z, 1, -1).reshape(-1, z.shape[1])


def _check_grid(model: CodecModel, grid: TSDFGrid) -> None:
    if grid.resolution != model.config.resolution:
        raise ValueError(f"grid resolution {grid.resolution} does not match codec resolution "
                         f"{model.config.resolution}")


def encode(model: CodecModel, grid: TSDFGrid) -> tuple[np.ndarray, TokenGrid]:
    """Continuous codes (d, d, d, S) and nearest-entry tokens for one grid."""
    _check_grid(model, grid)
    s = (grid.values / grid.truncation).astype(np.float32)[None, None]
    z = model.encode_batch(s).data
    d = model.config.token_resolution
    idx = quantize(_codes_to_rows(z), model.codebook.data).reshape(d, d, d)
    return np.moveaxis(z[0], 0, -1), TokenGrid(idx, model.config.codebook_size)


def decode(model: CodecModel, tokens: TokenGrid, origin: RigidTransform | None = None) -> TSDFGrid:
    """T-SDF for a token grid; values clamped to the truncation band."""
    if tokens.codebook_size != model.config.codebook_size:
        raise ValueError("token grid was made for a different codebook size")
    if tokens.resolution != model.config.token_resolution:
        raise ValueError(f"token grid resolution {tokens.resolution} != {model.config.token_resolution}")
    return decode_embeddings(model, model.lookup(tokens.indices[None]).data, origin)


def decode_embeddings(model: CodecModel, e: np.ndarray, origin: RigidTransform | None = None) -> TSDFGrid:
    out = model.decode_batch(Tensor(np.asarray(e, dtype=np.float32))).data[0, 0]
    vals = np.clip(out, -1.0, 1.0) * model.truncation
    return TSDFGrid(vals, model.extent, model.truncation, origin or RigidTransform.identity())


def vq_loss(s, s_hat, z_e, e, beta: float = 1.0) -> tuple[Tensor, dict[str, float]]:
    """Reconstruction + codebook + commitment loss.

    ``z_e`` and ``e`` are (M, S) rows, one per token. Term 1 is the mean
    absolute voxel error; terms 2 and 3 are squared distances averaged over
    tokens, with the stop-gradient on the encoder side and codebook side
    respectively.
    """
    s, s_hat, z_e, e = (T.as_tensor(v) for v in (s, s_hat, z_e, e))
    if s.shape != s_hat.shape or z_e.shape != e.shape:
        raise ValueError(f"shape mismatch: s {s.shape} vs s_hat {s_hat.shape}, z_e {z_e.shape} vs e {e.shape}")
    m = z_e.shape[0] if z_e.ndim > 1 else 1
    rec = T.mean(T.tabs(s - s_hat))
    book = T.tsum(T.square(stop_gradient(z_e) - e)) * (1.0 / m)
    commit = T.tsum(T.square(z_e - stop_gradient(e))) * (beta / m)
    total = rec + book + commit
    terms = {"reconstruction": float(rec.data), "codebook": float(book.data), "commitment": float(commit.data)}
    if not np.isfinite(total.data):
        raise VQLossError(f"non-finite VQ loss: {terms}")
    return total, terms


def forward_train(model: CodecModel, s: np.ndarray) -> tuple[Tensor, dict[str, float], np.ndarray]:
    """Full straight-through pass on a batch (N, 1, D, D, D); returns loss, terms, indices."""
    z = model.encode_batch(s)
    n, sdim = z.shape[:2]
    d = model.config.token_resolution
    z_rows = T.reshape(T.transpose(z, (0, 2, 3, 4, 1)), (-1, sdim))
    idx = quantize(z_rows.data, model.codebook.data)
    e_rows = T.take_rows(model.codebook, idx)
    # straight-through: forward uses e, backward copies the gradient to z
    e_st = z_rows + stop_gradient(e_rows - z_rows)
    e_grid = T.transpose(T.reshape(e_st, (n, d, d, d, sdim)), (0, 4, 1, 2, 3))
    s_hat = model.decode_batch(e_grid)
    loss, terms = vq_loss(s, s_hat, z_rows, e_rows, model.beta)
    return loss, terms, idx


def _stack(grids: list[TSDFGrid]) -> np.ndarray:
    return np.stack([g.values / g.truncation for g in grids]).astype(np.float32)[:, None]


def usage_histogram(model: CodecModel, data: np.ndarray, batch: int = 32) -> np.ndarray:
    counts = np.zeros(model.config.codebook_size, dtype=np.int64)
    for i in range(0, len(data), batch):
        z = model.encode_batch(data[i:i + batch]).data
        counts += np.bincount(quantize(_codes_to_rows(z), model.codebook.data), minlength=len(counts))
    return counts


def empty_space_index(model: CodecModel, data: np.ndarray) -> int:
    """Most frequent token among patches that are entirely outside the surface band."""
    p, d = model.config.patch, model.config.token_resolution
    counts = np.zeros(model.config.codebook_size, dtype=np.int64)
    for i in range(len(data)):
        vol = data[i, 0].reshape(d, p, d, p, d, p)
        empty = (vol >= 1.0 - 1e-5).all(axis=(1, 3, 5))
        if not empty.any():
            continue
        z = model.encode_batch(data[i:i + 1]).data
        idx = quantize(_codes_to_rows(z), model.codebook.data).reshape(d, d, d)
        counts += np.bincount(idx[empty], minlength=len(counts))
    return int(np.argmax(counts))


def train_codec(dataset: list[TSDFGrid], config: CodecConfig = CodecConfig(), role: str = "object",
                min_shapes: int = 32) -> CodecModel:
    """Train a codec by minibatch Adam (or momentum SGD); the model's ``log`` holds per-epoch terms."""
    if len(dataset) < min_shapes:
        raise ValueError(f"need at least {min_shapes} training shapes, got {len(dataset)}")
    ref = dataset[0]
    model = CodecModel.create(config, role, ref.extent, ref.truncation)
    for g in dataset:
        _check_grid(model, g)
    data = _stack(dataset)
    params = model.parameters()
    if config.optimizer == "adam":
        state, step = AdamState(config.learning_rate), adam_step
    else:
        state, step = OptimizerState(config.learning_rate, config.momentum), sgd_step
    rng = np.random.default_rng(config.seed + 1)
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        sums = {"reconstruction": 0.0, "codebook": 0.0, "commitment": 0.0}
        counts = np.zeros(config.codebook_size, dtype=np.int64)
        batches = 0
        for i in range(0, len(order), config.batch_size):
            batch = data[order[i:i + config.batch_size]]
            for p in params.values():
                p.zero_grad()
            loss, terms, idx = forward_train(model, batch)
            loss.backward()
            step(params, state)
            for k in sums:
                sums[k] += terms[k]
            counts += np.bincount(idx, minlength=config.codebook_size)
            batches += 1
        entry = {"epoch": epoch, **{k: v / batches for k, v in sums.items()},
                 "codes_used": int((counts > 0).sum()), "usage": counts.tolist()}
        if entry["codes_used"] < COLLAPSE_FRACTION * config.codebook_size:
            entry["warning"] = "codebook collapse"
            log.warning("epoch %d: codebook collapse, %d of %d entries used", epoch, entry["codes_used"],
                        config.codebook_size)
        log.info("epoch %d rec %.4f book %.4f commit %.4f used %d", epoch, entry["reconstruction"],
                 entry["codebook"], entry["commitment"], entry["codes_used"])
        model.log.append(entry)
    model.empty_index = empty_space_index(model, data)
    return model


def save_codec(model: CodecModel, path: str | Path) -> None:
    params = {k: v.data for k, v in model.parameters().items() if k != "codebook"}
    meta = {"kind": "codec", "role": model.role, "extent": model.extent, "truncation": model.truncation,
            "empty_index": model.empty_index, "config": asdict(model.config)}
    checkpoint.save(path, params, codebook=model.codebook.data, meta=meta)


def load_codec(path: str | Path) -> CodecModel:
    params, sections = checkpoint.load(path)
    meta = checkpoint.load_meta(sections)
    if meta.get("kind") != "codec" or "CDBK" not in sections:
        raise checkpoint.CheckpointError(f"{path}: not a codec checkpoint")
    cfg = meta["config"]
    config = CodecConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})
    model = CodecModel.create(config, meta["role"], meta["extent"], meta["truncation"])
    for name, p in model.parameters().items():
        if name == "codebook":
            continue
        if name not in params or params[name].shape != p.shape:
            raise checkpoint.CheckpointError(f"{path}: parameter {name} missing or mis-shaped")
        p.data = params[name]
    model.codebook.data = checkpoint.parse_codebook_section(sections["CDBK"])
    model.empty_index = int(meta["empty_index"])
    return model
