"""Multi-class occupancy network: max-pooled point encoder and a query decoder.

The encoder is a shared per-point perceptron (3 -> 64 -> 128 -> latent) with
a coordinatewise max over points. The decoder consumes the latent code
concatenated with a query point: 8 hidden layers of width 512, the first
hidden layer's output added into the fifth layer's pre-activation, batch
normalization on that skip-merged pre-activation and on the last hidden
pre-activation, and a linear head producing one logit per class.
"""
from __future__ import annotations

import copy
import json
import logging
import os
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataset import OccupancyPointCloud, PairArrays
from .errors import ConfigError, Divergence, EmptyCloud, EmptyReconstruction, LabelOutOfRange, ShapeMismatch
from .sensor import DepthPointCloud, query_bounds

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TOCCKPT1"
PREDICT_CHUNK = 65536


def set_threads_from_env() -> int:
    n = int(os.environ.get("TUMOROCC_THREADS", "0") or 0)
    if n > 0:
        torch.set_num_threads(n)
    return torch.get_num_threads()


@dataclass(frozen=True)
class NetworkConfig:
    latent_dim: int = 1024
    hidden_layers: int = 8
    hidden_width: int = 512
    skip_layer: int = 5
    n_classes: int = 4
    encoder_widths: tuple[int, ...] = (64, 128, 1024)
    coord_scale: float = 100.0
    bn_momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        if self.latent_dim <= 0 or self.hidden_layers < 1 or self.hidden_width <= 0:
            raise ConfigError("latent_dim, hidden_layers and hidden_width must be positive")
        if not 1 <= self.skip_layer <= self.hidden_layers:
            raise ConfigError("skip_layer must lie within [1, hidden_layers]")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if not self.encoder_widths or self.encoder_widths[-1] != self.latent_dim:
            raise ConfigError("last encoder width must equal latent_dim")

    @classmethod
    def reduced(cls, n_classes: int = 4) -> "NetworkConfig":
        """Small network with the same topology, for gradient checks."""
        return cls(latent_dim=32, hidden_layers=2, hidden_width=32, skip_layer=2,
                   n_classes=n_classes, encoder_widths=(16, 32, 32))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_scenes: int = 8
    queries_per_scene: int = 512
    epochs: int = 30
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    max_steps: int | None = None
    validate_every: int = 1
    bn_batches: int = 32
    target_miou: float | None = None  # stop once a validation reaches this
    lr_schedule: str = "constant"  # or "cosine": anneal to 1% of the rate over the run

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_scenes < 1 or self.queries_per_scene < 1 or self.epochs < 1:
            raise ConfigError("training hyperparameters must be positive")
        if not all(0 < b < 1 for b in self.betas):
            raise ConfigError("moment coefficients must be in (0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown learning-rate schedule {self.lr_schedule!r}")


class OccupancyNetwork(nn.Module):
    def __init__(self, config: NetworkConfig = NetworkConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        widths = (3,) + config.encoder_widths
        self.encoder = nn.ModuleList(nn.Linear(a, b) for a, b in zip(widths[:-1], widths[1:]))
        W = config.hidden_width
        dims = [config.latent_dim + 3] + [W] * config.hidden_layers
        self.decoder = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.head = nn.Linear(W, config.n_classes)
        self.bn_skip = nn.BatchNorm1d(W, momentum=config.bn_momentum)
        self.bn_final = nn.BatchNorm1d(W, momentum=config.bn_momentum) if config.skip_layer != config.hidden_layers else None
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0) -> None:
        g = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for lin in [*self.encoder, *self.decoder, self.head]:
                bound = (6.0 / lin.in_features) ** 0.5
                lin.weight.uniform_(-bound, bound, generator=g)
                lin.bias.zero_()
            for bn in (self.bn_skip, self.bn_final):
                if bn is not None:
                    bn.reset_parameters()
                    bn.reset_running_stats()

    def encode(self, points: torch.Tensor) -> torch.Tensor:
        """(B, N, 3) points -> (B, latent_dim)."""
        h = points / self.config.coord_scale
        for lin in self.encoder:
            h = F.relu(lin(h))
        return h.max(dim=1).values

    def decode(self, latent: torch.Tensor, queries: torch.Tensor) -> torch.Tensor:
        """(B, L) latent and (B, Q, 3) queries -> (B, Q, C) logits."""
        cfg = self.config
        B, Q, _ = queries.shape
        if latent.shape != (B, cfg.latent_dim):
            raise ShapeMismatch(f"latent shape {tuple(latent.shape)} != ({B}, {cfg.latent_dim})")
        first = self.decoder[0]
        L = cfg.latent_dim
        # concat(latent, q) @ W.T split in two so the latent term is computed once per scene
        a = F.linear(queries / cfg.coord_scale, first.weight[:, L:]) + F.linear(latent, first.weight[:, :L], first.bias)[:, None, :]
        a = a.reshape(B * Q, -1)
        if cfg.skip_layer == 1:
            a = self.bn_skip(a)
        h = h1 = F.relu(a)
        for i in range(2, cfg.hidden_layers + 1):
            a = self.decoder[i - 1](h)
            if i == cfg.skip_layer:
                a = self.bn_skip(a + h1)
            elif i == cfg.hidden_layers:
                a = self.bn_final(a)
            h = F.relu(a)
        return self.head(h).reshape(B, Q, -1)

    def forward(self, points: torch.Tensor, queries: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(points), queries)


def loss_fn(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over the batch."""
    C = logits.shape[-1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= C):
        raise LabelOutOfRange(f"labels must lie in [0, {C})")
    if logits.shape[:-1] != labels.shape:
        raise ShapeMismatch("logits and labels disagree in batch shape")
    return F.cross_entropy(logits.reshape(-1, C), labels.reshape(-1))


def _points_tensor(dpp, dtype) -> torch.Tensor:
    pts = dpp.points if isinstance(dpp, DepthPointCloud) else np.asarray(dpp)
    if len(pts) == 0:
        raise EmptyCloud("point cloud is empty")
    return torch.as_tensor(np.asarray(pts), dtype=dtype)[None]


def _dtype(net: OccupancyNetwork) -> torch.dtype:
    return net.head.weight.dtype


def encode(dpp, net: OccupancyNetwork) -> np.ndarray:
    net.eval()
    with torch.no_grad():
        return net.encode(_points_tensor(dpp, _dtype(net)))[0].numpy()


def decode(latent, queries, net: OccupancyNetwork, mode: str = "eval") -> np.ndarray:
    """Logits (Q, C) for one latent code; ``mode`` selects batch or running BN statistics."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "train":
        # batch statistics without touching the caller's running statistics
        net = copy.deepcopy(net).train()
    else:
        net.eval()
    dt = _dtype(net)
    z = torch.as_tensor(np.asarray(latent), dtype=dt).reshape(1, -1)
    q = torch.as_tensor(np.asarray(queries), dtype=dt).reshape(1, -1, 3)
    with torch.no_grad():
        return net.decode(z, q)[0].numpy()


def predict_logits(dpp, queries, net: OccupancyNetwork, chunk: int = PREDICT_CHUNK) -> np.ndarray:
    net.eval()
    dt = _dtype(net)
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    out = np.empty((len(q), net.config.n_classes), dtype=np.float64)
    with torch.no_grad():
        z = net.encode(_points_tensor(dpp, dt))
        for s in range(0, len(q), chunk):
            qq = torch.as_tensor(q[s : s + chunk], dtype=dt)[None]
            out[s : s + chunk] = net.decode(z, qq)[0].numpy()
    return out


def predict(dpp, queries, net: OccupancyNetwork, chunk: int = PREDICT_CHUNK) -> np.ndarray:
    """Argmax labels; ties go to the smaller class id."""
    return np.argmax(predict_logits(dpp, queries, net, chunk), axis=1)


def infer_occupancy(dpp: DepthPointCloud, net: OccupancyNetwork, n_queries: int = 40000, seed=0,
                    dilation: float = 1.2) -> OccupancyPointCloud:
    """Label uniform random queries around the DPP and keep the non-outside ones."""
    if n_queries < 1:
        raise ConfigError("n_queries must be >= 1")
    box = query_bounds(dpp.points, dilation)
    q = np.random.default_rng(seed).uniform(box.min, box.max, size=(n_queries, 3))
    labels = predict(dpp, q, net)
    keep = labels > 0
    if not keep.any():
        raise EmptyReconstruction("every query was labeled outside")
    return OccupancyPointCloud(q[keep], labels[keep], net.config.n_classes)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_miou: float = float("-inf")
    steps: int = 0

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)


def evaluate_pairs(net: OccupancyNetwork, data: PairArrays, chunk: int = 16) -> float:
    """Pooled mIoU of the network over every occupancy sample of ``data``."""
    from .evalrec import miou

    net.eval()
    preds = []
    dt = _dtype(net)
    with torch.no_grad():
        for s in range(0, len(data), chunk):
            pts = torch.as_tensor(data.dpp[s : s + chunk], dtype=dt)
            q = torch.as_tensor(data.occ_points[s : s + chunk], dtype=dt)
            preds.append(net(pts, q).argmax(-1).numpy())
    pred = np.concatenate(preds).ravel()
    return miou(pred, data.occ_labels.ravel(), data.n_classes)[1]


def _batch_indices(rng: np.random.Generator, n_scenes: int, n_samples: int, batch: int, queries: int):
    idx = rng.permutation(n_scenes)[:batch]
    qi = np.argsort(rng.random((len(idx), n_samples)), axis=1)[:, :queries]
    return idx, qi


def recalibrate_bn(net: OccupancyNetwork, data: PairArrays, batches: int = 32, batch_scenes: int = 8,
                   queries: int = 512, seed: int = 0) -> None:
    """Replace the running BN statistics by exact averages over ``batches`` training-style batches.

    Running averages with a fixed momentum trail the weights while they move;
    averaging over fresh batches at the current weights removes that lag.
    """
    bns = [m for m in (net.bn_skip, net.bn_final) if m is not None]
    rng = np.random.default_rng(seed)
    P, M = data.occ_labels.shape
    saved = [bn.momentum for bn in bns]
    for bn in bns:
        bn.reset_running_stats()
        bn.momentum = None
    net.train()
    dt = _dtype(net)
    with torch.no_grad():
        for _ in range(batches):
            idx, qi = _batch_indices(rng, P, M, batch_scenes, min(queries, M))
            pts = torch.as_tensor(data.dpp[idx], dtype=dt)
            q = torch.as_tensor(data.occ_points[idx[:, None], qi], dtype=dt)
            net(pts, q)
    for bn, m in zip(bns, saved):
        bn.momentum = m
    net.eval()


def train(data: PairArrays, net_config: NetworkConfig, train_config: TrainConfig,
          validation: PairArrays | None = None, callback: Callable[[dict], None] | None = None):
    """Adam over minibatches of (scene, query subset); keeps the best-validation weights.

    BN statistics are recomputed at the current weights before every
    validation and before returning. Returns ``(net, history)``. Without a
    validation set the last weights are kept.
    """
    if len(data) == 0:
        raise ConfigError("empty training set")
    if net_config.n_classes != data.n_classes:
        raise ConfigError("network class count does not match the dataset")
    tc = train_config
    rng = np.random.default_rng(tc.seed)
    net = OccupancyNetwork(net_config, seed=tc.seed)
    opt = torch.optim.Adam(net.parameters(), lr=tc.learning_rate, betas=tc.betas)
    hist = TrainHistory()
    best_state = None
    P, M = data.occ_labels.shape
    total = tc.epochs * -(-P // tc.batch_scenes)
    if tc.max_steps is not None:
        total = min(total, tc.max_steps)
    sched = None
    if tc.lr_schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, total, eta_min=0.01 * tc.learning_rate)
    Q = min(tc.queries_per_scene, M)
    dpp_t = torch.from_numpy(data.dpp)
    occ_t = torch.from_numpy(data.occ_points)
    lab_t = torch.from_numpy(data.occ_labels)
    done = False
    for epoch in range(tc.epochs):
        t0 = time.perf_counter()
        net.train()
        order = rng.permutation(P)
        losses = []
        for s in range(0, P, tc.batch_scenes):
            idx = order[s : s + tc.batch_scenes]
            qi = np.argsort(rng.random((len(idx), M)), axis=1)[:, :Q]
            idx_t = torch.from_numpy(idx)[:, None]
            qi_t = torch.from_numpy(qi)
            logits = net(dpp_t[idx], occ_t[idx_t, qi_t])
            loss = loss_fn(logits, lab_t[idx_t, qi_t])
            if not torch.isfinite(loss):
                raise Divergence(f"non-finite loss at step {hist.steps}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            losses.append(loss.item())
            hist.steps += 1
            if tc.max_steps is not None and hist.steps >= tc.max_steps:
                done = True
                break
        rec = {"epoch": epoch, "steps": hist.steps, "train_loss": float(np.mean(losses))}
        last = done or epoch == tc.epochs - 1
        if validation is not None and ((epoch + 1) % tc.validate_every == 0 or last):
            recalibrate_bn(net, data, tc.bn_batches, tc.batch_scenes, Q, tc.seed + epoch + 1)
            rec["val_miou"] = evaluate_pairs(net, validation)
            if rec["val_miou"] > hist.best_miou:
                hist.best_miou, hist.best_epoch = rec["val_miou"], epoch
                best_state = copy.deepcopy(net.state_dict())
            if tc.target_miou is not None and rec["val_miou"] >= tc.target_miou:
                done = True
        rec["wall_ms"] = (time.perf_counter() - t0) * 1000.0
        hist.records.append(rec)
        log.info("epoch %d loss %.4f val %s", epoch, rec["train_loss"], rec.get("val_miou"))
        if callback is not None:
            callback(rec)
        if done:
            break
    if best_state is not None:
        net.load_state_dict(best_state)
    else:
        recalibrate_bn(net, data, tc.bn_batches, tc.batch_scenes, Q, tc.seed)
    net.eval()
    return net, hist


# --------------------------------------------------------------------------
# checkpoints


def _tensors(net: OccupancyNetwork) -> dict[str, torch.Tensor]:
    return {k: v for k, v in net.state_dict().items() if not k.endswith("num_batches_tracked")}


def save_checkpoint(path, net: OccupancyNetwork, meta: dict | None = None) -> None:
    """JSON header (config + tensor manifest) followed by a little-endian float32 blob."""
    manifest, blobs, offset = [], [], 0
    for name, t in _tensors(net).items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {"format": "tumorocc-checkpoint", "version": 1, "dtype": "float32-le",
              "config": asdict(net.config), "tensors": manifest, "meta": meta or {}}
    hb = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<Q", len(hb)) + hb)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[OccupancyNetwork, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ConfigError(f"{path} is not a checkpoint")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n].decode("utf-8"))
    base = 16 + n
    net = OccupancyNetwork(NetworkConfig(**header["config"]))
    state = net.state_dict()
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=base + entry["offset"]).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    net.load_state_dict(state)
    net.eval()
    return net, header.get("meta", {})
