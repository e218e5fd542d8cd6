"""Desk-scale multi-channel CNN: per-channel branches with max-feature-map
activations, concatenated embeddings into a 10+1 sigmoidal head, and
domain-specific-unit (DSU) adaptation over named layer groups with a frozen
shared backbone.

Layer groups (base width b, default 16):
    C1:  conv 5x5, 1 -> 2b, pad 2, MFM -> b, 2x2 max pool
    B1:  conv 3x3, b -> 2b, pad 1, MFM -> b, pool
    G1:  conv 3x3, b -> 3b, pad 1, MFM -> 3b/2, pool
    EMB: flatten -> linear -> 2E, MFM -> E
    FFC: linear |channels|*E -> 10 -> sigmoid -> linear -> 1 -> sigmoid

The gray branch always uses the shared (frozen) backbone; channels in the
adapt set get their own trainable copies of those groups; FFC always trains.

Model files: magic "MCNN", version u8, u32 config-JSON length, JSON config
echo, u32 block count, then per block u16 name length + name, u8 ndim,
u32 dims..., float32 data (little-endian, names sorted).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, replace as dataclass_replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .classical import FitError
from .dataset import ChannelId
from .evaluation import threshold_from_bonafide

MODEL_MAGIC = b"MCNN"
MODEL_VERSION = 1

GROUPS = ("C1", "B1", "G1", "EMB")
HEAD_GROUP = "FFC"

INPUT_SCALE = 128.0
INPUT_SHIFT = 127.5


@dataclass(frozen=True)
class McCnnConfig:
    channels: tuple[ChannelId, ...] = (
        ChannelId.GRAY, ChannelId.DEPTH, ChannelId.INFRARED, ChannelId.THERMAL,
    )
    input_size: int = 64
    embedding_dim: int = 64
    adapt: frozenset[str] = frozenset({"C1", "B1"})
    epochs: int = 25
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    flip_prob: float = 0.5
    seed: int = 0
    base_width: int = 16
    bpcer_target: float = 0.01
    pretrain_epochs: int = 10

    def __post_init__(self):
        if not self.channels:
            raise ValueError("channels must be nonempty")
        if ChannelId.COLOR in self.channels:
            raise ValueError("the network consumes preprocessed channels (no color)")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("duplicate channels")
        if not set(self.adapt) <= set(GROUPS):
            raise ValueError(f"adapt set must be a subset of {GROUPS} (FFC always trains)")
        if self.input_size % 8 != 0 or self.input_size < 8:
            raise ValueError("input size must be a positive multiple of 8")
        if self.base_width % 2 != 0 or self.base_width < 2:
            raise ValueError("base width must be even and >= 2")
        if self.embedding_dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("embedding dim, epochs, and batch size must be positive")
        if self.pretrain_epochs < 1:
            raise ValueError("pretrain epochs must be positive")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip probability must be in [0, 1]")

    @property
    def emb_input(self) -> int:
        return (3 * self.base_width // 2) * (self.input_size // 8) ** 2

    @property
    def head_input(self) -> int:
        return len(self.channels) * self.embedding_dim


def frames_to_input(stack: np.ndarray) -> np.ndarray:
    """Map 8-bit frames to roughly [-1, 1] floats."""
    return ((np.asarray(stack, dtype=np.float32) - INPUT_SHIFT) / INPUT_SCALE).astype(np.float32)


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

def _group_shapes(cfg: McCnnConfig) -> dict[str, dict[str, tuple[int, ...]]]:
    b = cfg.base_width
    return {
        "C1": {"conv_w": (2 * b, 1, 5, 5), "conv_b": (2 * b,)},
        "B1": {"conv_w": (2 * b, b, 3, 3), "conv_b": (2 * b,)},
        "G1": {"conv_w": (3 * b, b, 3, 3), "conv_b": (3 * b,)},
        "EMB": {"lin_w": (2 * cfg.embedding_dim, cfg.emb_input), "lin_b": (2 * cfg.embedding_dim,)},
    }


def _he_init(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) == 1:
        return np.zeros(shape)
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_backbone(cfg: McCnnConfig, seed: int | None = None) -> dict[str, dict[str, np.ndarray]]:
    """Fresh backbone parameter blocks (deterministic from the seed)."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed if seed is None else seed, 97)))
    return {
        group: {name: _he_init(rng, shape) for name, shape in shapes.items()}
        for group, shapes in _group_shapes(cfg).items()
    }


# The head starts near zero (still symmetry-broken): at the paper's small
# learning rate the adapted weights move a fixed O(epochs*lr) distance, so a
# small init keeps the learned class signal from being swamped by random
# projections of identity-specific embedding variation.
_HEAD_INIT_SCALE = 0.05


def _init_head(cfg: McCnnConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 101)))
    return {
        "fc1_w": _HEAD_INIT_SCALE * _he_init(rng, (10, cfg.head_input)),
        "fc1_b": np.zeros(10),
        "fc2_w": _HEAD_INIT_SCALE * _he_init(rng, (1, 10)),
        "fc2_b": np.zeros(1),
    }


@dataclass
class McCnnModel:
    config: McCnnConfig
    shared: dict[str, dict[str, Tensor]]
    dsu: dict[tuple[ChannelId, str], dict[str, Tensor]]
    head: dict[str, Tensor]

    @property
    def dtype(self):
        return self.shared["C1"]["conv_w"].data.dtype

    def block(self, channel: ChannelId, group: str) -> dict[str, Tensor]:
        """DSU copy when the group is adapted for a non-gray channel, else
        the shared (frozen) block."""
        key = (channel, group)
        return self.dsu.get(key, self.shared[group])

    def trainable(self) -> list[tuple[str, Tensor]]:
        named = []
        for (channel, group), block in sorted(self.dsu.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            named.extend((f"dsu.{channel.label}.{group}.{n}", t) for n, t in sorted(block.items()))
        named.extend((f"head.{n}", t) for n, t in sorted(self.head.items()))
        return named

    def named_blocks(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for group, block in self.shared.items():
            for name, tensor in block.items():
                out[f"shared.{group}.{name}"] = tensor.data
        for (channel, group), block in self.dsu.items():
            for name, tensor in block.items():
                out[f"dsu.{channel.label}.{group}.{name}"] = tensor.data
        for name, tensor in self.head.items():
            out[f"head.{name}"] = tensor.data
        return out


def build_model(
    cfg: McCnnConfig,
    backbone: Mapping[str, Mapping[str, np.ndarray]] | None = None,
    dtype=np.float32,
) -> McCnnModel:
    """Assemble a model: shared blocks are frozen copies of the backbone,
    adapted non-gray channels get trainable DSU copies, the head trains.
    Training runs float32; pass float64 for finite-difference checks."""
    if backbone is None:
        backbone = init_backbone(cfg)
    shapes = _group_shapes(cfg)
    for group, expected in shapes.items():
        for name, shape in expected.items():
            got = np.asarray(backbone[group][name]).shape
            if got != shape:
                raise ValueError(f"backbone block {group}.{name}: shape {got}, expected {shape}")
    shared = {
        group: {name: Tensor(np.array(backbone[group][name], dtype=dtype), requires_grad=False)
                for name in shapes[group]}
        for group in GROUPS
    }
    dsu: dict[tuple[ChannelId, str], dict[str, Tensor]] = {}
    for channel in cfg.channels:
        if channel is ChannelId.GRAY:
            continue
        for group in sorted(cfg.adapt):
            dsu[(channel, group)] = {
                name: ad.parameter(np.array(backbone[group][name], dtype=dtype))
                for name in shapes[group]
            }
    head = {name: ad.parameter(np.asarray(value, dtype=dtype)) for name, value in _init_head(cfg).items()}
    return McCnnModel(config=cfg, shared=shared, dsu=dsu, head=head)


# --------------------------------------------------------------------------
# forward graph
# --------------------------------------------------------------------------

def branch_forward(model: McCnnModel, channel: ChannelId, frames: np.ndarray | Tensor) -> Tensor:
    """Embedding of shape (N, E) for one channel's frame batch (N,S,S)."""
    cfg = model.config
    if isinstance(frames, Tensor):
        x = frames
    else:
        arr = np.asarray(frames, dtype=model.dtype)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.shape[-2:] != (cfg.input_size, cfg.input_size):
            raise ValueError(f"expected {cfg.input_size}x{cfg.input_size} frames, got {arr.shape}")
        x = Tensor(arr[:, None, :, :])
    c1 = model.block(channel, "C1")
    x = ad.maxpool2d(ad.mfm(ad.conv2d(x, c1["conv_w"], c1["conv_b"], padding=2)))
    b1 = model.block(channel, "B1")
    x = ad.maxpool2d(ad.mfm(ad.conv2d(x, b1["conv_w"], b1["conv_b"], padding=1)))
    g1 = model.block(channel, "G1")
    x = ad.maxpool2d(ad.mfm(ad.conv2d(x, g1["conv_w"], g1["conv_b"], padding=1)))
    emb = model.block(channel, "EMB")
    return ad.mfm(ad.linear(ad.flatten(x), emb["lin_w"], emb["lin_b"]))


def _head(model: McCnnModel, embeddings: Sequence[Tensor]) -> Tensor:
    h = concat_embeddings(embeddings)
    h = ad.sigmoid(ad.linear(h, model.head["fc1_w"], model.head["fc1_b"]))
    p = ad.sigmoid(ad.linear(h, model.head["fc2_w"], model.head["fc2_b"]))
    return ad.flatten(p)


def forward(model: McCnnModel, frames: Mapping[ChannelId, np.ndarray]) -> Tensor:
    """Probability of bonafide, shape (N,)."""
    missing = [ch.label for ch in model.config.channels if ch not in frames]
    if missing:
        raise ValueError(f"missing channels: {missing}")
    return _head(model, [branch_forward(model, ch, frames[ch]) for ch in model.config.channels])


def concat_embeddings(embeddings: Sequence[Tensor]) -> Tensor:
    return embeddings[0] if len(embeddings) == 1 else ad.concat(embeddings, axis=1)


def predict(model: McCnnModel, frames: Mapping[ChannelId, np.ndarray], batch_size: int = 64) -> np.ndarray:
    n = next(iter(frames.values())).shape[0]
    scores = np.empty(n, dtype=np.float64)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        batch = {ch: frames[ch][lo:hi] for ch in model.config.channels}
        scores[lo:hi] = forward(model, batch).data.reshape(-1)
    return scores


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def batch_class_weights(labels: np.ndarray) -> tuple[float, float]:
    """Dynamic per-batch weights w_c = N/(2*N_c); an absent class gets 1."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty batch")
    n = labels.size
    n_bona = int((labels == 1).sum())
    n_att = n - n_bona
    w_bona = 1.0 if n_bona == 0 else n / (2.0 * n_bona)
    w_att = 1.0 if n_att == 0 else n / (2.0 * n_att)
    return w_bona, w_att


def weighted_bce(p: Tensor, targets: np.ndarray, w_bonafide: float = 1.0, w_attack: float = 1.0) -> Tensor:
    return ad.weighted_bce(p, targets, w_bonafide, w_attack)


def flip_decision(seed: int, epoch: int, sample_index: int, prob: float) -> bool:
    """One horizontal-flip coin per sample per epoch, derived from
    (seed, epoch, sample index) so data-parallel loading cannot reorder it."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 733, epoch, sample_index)))
    return bool(rng.random() < prob)


@dataclass
class TrainData:
    train_x: dict[ChannelId, np.ndarray]
    train_y: np.ndarray
    dev_x: dict[ChannelId, np.ndarray]
    dev_y: np.ndarray


@dataclass
class TrainResult:
    model: McCnnModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_acer: float = float("nan")


class _Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _acer_at_dev_bpcer(scores: np.ndarray, labels: np.ndarray, target: float) -> tuple[float, float]:
    bona = scores[labels == 1]
    tau = threshold_from_bonafide(bona, target)
    att = scores[labels == 0]
    apcer = float((att >= tau).mean()) if att.size else 0.0
    bpcer = float((bona < tau).mean())
    return (apcer + bpcer) / 2.0, tau


def _embed_frozen(model: McCnnModel, channel: ChannelId, frames: np.ndarray, chunk: int = 128) -> np.ndarray:
    n = frames.shape[0]
    out = np.empty((n, model.config.embedding_dim), dtype=model.dtype)
    for lo in range(0, n, chunk):
        out[lo : lo + chunk] = branch_forward(model, channel, frames[lo : lo + chunk]).data
    return out


def train(
    data: TrainData,
    cfg: McCnnConfig,
    backbone: Mapping[str, Mapping[str, np.ndarray]] | None = None,
) -> TrainResult:
    """Train DSU copies of the adapt set plus the head with Adam; the best
    epoch is selected by dev ACER at the dev BPCER target threshold.

    Branches with no trainable blocks (the gray reference, or every branch
    when the adapt set is empty) are frozen, so their embeddings are
    precomputed once per flip variant instead of per step.
    """
    if not ((data.train_y == 1).any() and (data.train_y == 0).any()):
        raise FitError("training split needs both classes")
    model = build_model(cfg, backbone)
    frozen = {
        ch for ch in cfg.channels if all((ch, g) not in model.dsu for g in GROUPS)
    }
    emb_plain = {ch: _embed_frozen(model, ch, data.train_x[ch]) for ch in frozen}
    if cfg.flip_prob > 0.0:
        emb_flip = {
            ch: _embed_frozen(model, ch, np.ascontiguousarray(data.train_x[ch][..., ::-1]))
            for ch in frozen
        }
    else:
        emb_flip = emb_plain
    dev_emb = {ch: _embed_frozen(model, ch, data.dev_x[ch]) for ch in frozen}

    def batch_prob(idx: np.ndarray, flips: np.ndarray) -> Tensor:
        parts = []
        for ch in cfg.channels:
            if ch in frozen:
                arr = np.where(flips[:, None], emb_flip[ch][idx], emb_plain[ch][idx])
                parts.append(Tensor(arr))
            else:
                frames = np.array(data.train_x[ch][idx])
                if flips.any():
                    frames[flips] = frames[flips][..., ::-1]
                parts.append(branch_forward(model, ch, frames))
        return _head(model, parts)

    def dev_scores() -> np.ndarray:
        n = data.dev_y.size
        out = np.empty(n, dtype=np.float64)
        for lo in range(0, n, 64):
            sl = slice(lo, min(lo + 64, n))
            parts = []
            for ch in cfg.channels:
                if ch in frozen:
                    parts.append(Tensor(dev_emb[ch][sl]))
                else:
                    parts.append(branch_forward(model, ch, data.dev_x[ch][sl]))
            out[sl] = _head(model, parts).data.reshape(-1)
        return out

    trainable = [t for _, t in model.trainable()]
    optimizer = _Adam(trainable, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    result = TrainResult(model=model)
    best_snapshot = None
    best_acer = float("inf")
    n = data.train_y.size
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(np.random.SeedSequence((cfg.seed, 547, epoch))).permutation(n)
        total = 0.0
        batches = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            flips = np.array(
                [flip_decision(cfg.seed, epoch, int(i), cfg.flip_prob) for i in idx], dtype=bool
            )
            y = data.train_y[idx]
            w_bona, w_att = batch_class_weights(y)
            loss = weighted_bce(batch_prob(idx, flips), y, w_bona, w_att)
            for p in trainable:
                p.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.data)
            batches += 1
        scores = dev_scores()
        dev_acer, dev_tau = _acer_at_dev_bpcer(scores, data.dev_y, cfg.bpcer_target)
        result.history.append(
            {"epoch": epoch, "train_loss": total / max(batches, 1),
             "dev_acer": dev_acer, "dev_tau": dev_tau}
        )
        if dev_acer < best_acer:
            best_acer = dev_acer
            best_snapshot = [t.data.copy() for t in trainable]
            result.best_epoch = epoch
    if best_snapshot is not None:
        for tensor, snap in zip(trainable, best_snapshot):
            tensor.data = snap
    result.best_dev_acer = best_acer
    return result


def pretrain_reference(
    gray_frames: np.ndarray,
    labels: np.ndarray,
    cfg: McCnnConfig,
    epochs: int | None = None,
) -> tuple[dict[str, dict[str, np.ndarray]], list[float]]:
    """Stage-1 surrogate for face-recognition pretraining: a gray-only
    single-branch network with a temporary 1-node head trained on the PAD
    labels. Returns (backbone blocks, per-epoch mean loss)."""
    labels = np.asarray(labels)
    if not ((labels == 1).any() and (labels == 0).any()):
        raise FitError("pretraining needs both classes")
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    backbone = init_backbone(cfg)
    pre_cfg = dataclass_replace(cfg, channels=(ChannelId.GRAY,), adapt=frozenset())
    shapes = _group_shapes(pre_cfg)
    blocks = {
        group: {
            name: ad.parameter(np.array(backbone[group][name], dtype=np.float32))
            for name in shapes[group]
        }
        for group in GROUPS
    }
    head_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 103)))
    head_w = ad.parameter(_he_init(head_rng, (1, pre_cfg.embedding_dim)).astype(np.float32))
    head_b = ad.parameter(np.zeros(1, dtype=np.float32))

    proxy = McCnnModel(config=pre_cfg, shared=blocks, dsu={}, head={})
    frames = np.asarray(gray_frames)

    params = [t for group in GROUPS for _, t in sorted(blocks[group].items())] + [head_w, head_b]
    optimizer = _Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    losses = []
    n = labels.size
    for epoch in range(epochs):
        order = np.random.default_rng(np.random.SeedSequence((cfg.seed + 1, 547, epoch))).permutation(n)
        total = 0.0
        batches = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            flips = np.array(
                [flip_decision(cfg.seed + 1, epoch, int(i), cfg.flip_prob) for i in idx], dtype=bool
            )
            batch = np.array(frames[idx], dtype=np.float32)
            if flips.any():
                batch[flips] = batch[flips][..., ::-1]
            emb = branch_forward(proxy, ChannelId.GRAY, Tensor(batch[:, None]))
            p = ad.flatten(ad.sigmoid(ad.linear(emb, head_w, head_b)))
            y = labels[idx]
            w_bona, w_att = batch_class_weights(y)
            loss = weighted_bce(p, y, w_bona, w_att)
            for param in params:
                param.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.data)
            batches += 1
        losses.append(total / max(batches, 1))
    return {g: {n: t.data.copy() for n, t in blk.items()} for g, blk in blocks.items()}, losses


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------

def grad_check(
    model: McCnnModel,
    frames: Mapping[ChannelId, np.ndarray],
    labels: np.ndarray,
    eps: float = 1e-4,
) -> float:
    """Central finite differences vs analytic gradients through forward +
    weighted BCE, over every trainable parameter."""
    w_bona, w_att = batch_class_weights(labels)

    def loss_fn():
        return weighted_bce(forward(model, frames), labels, w_bona, w_att)

    return ad.check_gradients(loss_fn, [t for _, t in model.trainable()], eps=eps)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def _config_json(cfg: McCnnConfig) -> dict:
    return {
        "channels": [ch.label for ch in cfg.channels],
        "input_size": cfg.input_size,
        "embedding_dim": cfg.embedding_dim,
        "adapt": sorted(cfg.adapt),
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "adam_eps": cfg.adam_eps,
        "flip_prob": cfg.flip_prob,
        "seed": cfg.seed,
        "base_width": cfg.base_width,
        "bpcer_target": cfg.bpcer_target,
        "pretrain_epochs": cfg.pretrain_epochs,
    }


def config_from_json(payload: Mapping) -> McCnnConfig:
    return McCnnConfig(
        channels=tuple(ChannelId.from_label(c) for c in payload["channels"]),
        input_size=payload["input_size"],
        embedding_dim=payload["embedding_dim"],
        adapt=frozenset(payload["adapt"]),
        epochs=payload["epochs"],
        batch_size=payload["batch_size"],
        learning_rate=payload["learning_rate"],
        beta1=payload["beta1"],
        beta2=payload["beta2"],
        adam_eps=payload["adam_eps"],
        flip_prob=payload["flip_prob"],
        seed=payload["seed"],
        base_width=payload["base_width"],
        bpcer_target=payload["bpcer_target"],
        pretrain_epochs=payload["pretrain_epochs"],
    )


def block_bytes(model: McCnnModel) -> dict[str, bytes]:
    """Serialized (float32) bytes of every named parameter block."""
    return {name: np.asarray(arr, dtype="<f4").tobytes() for name, arr in model.named_blocks().items()}


def save_model(model: McCnnModel, path: str | Path) -> None:
    config_blob = json.dumps(_config_json(model.config), sort_keys=True).encode()
    blocks = model.named_blocks()
    parts = [MODEL_MAGIC, struct.pack("<BI", MODEL_VERSION, len(config_blob)), config_blob,
             struct.pack("<I", len(blocks))]
    for name in sorted(blocks):
        arr = np.asarray(blocks[name], dtype="<f4")
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def load_model(path: str | Path) -> McCnnModel:
    blob = Path(path).read_bytes()
    if blob[:4] != MODEL_MAGIC:
        raise ValueError(f"bad model magic {blob[:4]!r}")
    version, config_len = struct.unpack_from("<BI", blob, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"unknown model version {version}")
    pos = 9
    cfg = config_from_json(json.loads(blob[pos : pos + config_len].decode()))
    pos += config_len
    (n_blocks,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    blocks: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        blocks[name] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
            .reshape(shape)
            .astype(np.float64)
        )
        pos += count * 4

    model = build_model(cfg)
    named = model.named_blocks()
    missing = set(named) - set(blocks)
    extra = set(blocks) - set(named)
    if missing or extra:
        raise ValueError(f"model blocks mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
    for group, block in model.shared.items():
        for name, tensor in block.items():
            tensor.data = blocks[f"shared.{group}.{name}"]
    for (channel, group), block in model.dsu.items():
        for name, tensor in block.items():
            tensor.data = blocks[f"dsu.{channel.label}.{group}.{name}"]
    for name, tensor in model.head.items():
        tensor.data = blocks[f"head.{name}"]
    return model
