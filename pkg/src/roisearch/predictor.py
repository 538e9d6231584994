"""Ensemble of multi-task MLP surrogates mapping encodings to (NE gain, FLOPs).

Each member is a ReLU trunk ``[input_dim, 50, 50]`` with inverted dropout after
every trunk activation, followed by two linear heads. Members are trained with
AdamW on randomly sampled ordered pairs, using either the pairwise margin
hinge loss or MSE on both heads. Labels are z-scored by training-set stats;
``predict`` returns values de-standardised back to label units (NE gain and
log10 FLOPs).
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np

from . import kernels
from .curves import kendall_tau
from .errors import DegenerateBatchError, DivergenceError, ShapeError

CHECKPOINT_VERSION = 1
HIDDEN = 50
PARAM_NAMES = ("w1", "b1", "w2", "b2", "w_ne", "b_ne", "w_fl", "b_fl")


@dataclass(frozen=True)
class TrainRecord:
    encoding: np.ndarray
    ne_label: float
    flops_label: float
    config_id: str = ""

    def __post_init__(self) -> None:
        if not (math.isfinite(self.ne_label) and math.isfinite(self.flops_label)):
            raise ValueError(f"non-finite label in record {self.config_id!r}")


@dataclass
class TrainingConfig:
    loss: Literal["pairwise_rank", "mse"] = "pairwise_rank"
    margin: float = 0.001
    lr: float = 0.001
    weight_decay: float = 0.005
    epochs: int = 1000
    batch_pairs: int = 512
    dropout: float = 0.5
    hidden: int = HIDDEN
    flops_loss: Literal["same", "mse"] = "same"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.loss not in ("pairwise_rank", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")

    @classmethod
    def from_dict(cls, d: dict) -> TrainingConfig:
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class MLPParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_ne: np.ndarray
    b_ne: np.ndarray
    w_fl: np.ndarray
    b_fl: np.ndarray
    dropout: float = 0.5

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self) -> MLPParams:
        return MLPParams(*(a.copy() for a in self.arrays()), dropout=self.dropout)

    def to_dict(self) -> dict:
        out = {n: getattr(self, n).tolist() for n in PARAM_NAMES}
        out["dropout"] = self.dropout
        return out

    @classmethod
    def from_dict(cls, d: dict) -> MLPParams:
        return cls(*(np.asarray(d[n], dtype=float) for n in PARAM_NAMES), dropout=float(d.get("dropout", 0.5)))

    @classmethod
    def zeros(cls, input_dim: int, hidden: int = HIDDEN, dropout: float = 0.5) -> MLPParams:
        return cls(
            np.zeros((input_dim, hidden)), np.zeros(hidden),
            np.zeros((hidden, hidden)), np.zeros(hidden),
            np.zeros(hidden), np.zeros(1), np.zeros(hidden), np.zeros(1),
            dropout=dropout,
        )


def init_params(input_dim: int, rng: np.random.Generator, hidden: int = HIDDEN, dropout: float = 0.5) -> MLPParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""

    def u(fan_in, shape):
        s = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-s, s, shape)

    return MLPParams(
        u(input_dim, (input_dim, hidden)), u(input_dim, hidden),
        u(hidden, (hidden, hidden)), u(hidden, hidden),
        u(hidden, hidden), u(hidden, 1), u(hidden, hidden), u(hidden, 1),
        dropout=dropout,
    )


class _Cache(NamedTuple):
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    m1: np.ndarray | None
    z2: np.ndarray
    h2: np.ndarray
    m2: np.ndarray | None


def _dropout_mask(rng, shape, rate):
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _forward(params: MLPParams, x: np.ndarray, masks=None) -> tuple[np.ndarray, np.ndarray, _Cache]:
    z1 = x @ params.w1 + params.b1
    h1 = np.maximum(z1, 0.0)
    m1 = m2 = None
    if masks is not None:
        m1, m2 = masks
        h1 = h1 * m1
    z2 = h1 @ params.w2 + params.b2
    h2 = np.maximum(z2, 0.0)
    if masks is not None:
        h2 = h2 * m2
    ne = h2 @ params.w_ne + params.b_ne[0]
    fl = h2 @ params.w_fl + params.b_fl[0]
    return ne, fl, _Cache(x, z1, h1, m1, z2, h2, m2)


def _backward(params: MLPParams, cache: _Cache, d_ne: np.ndarray, d_fl: np.ndarray) -> list[np.ndarray]:
    h2 = cache.h2
    g_wne = h2.T @ d_ne
    g_bne = np.array([d_ne.sum()])
    g_wfl = h2.T @ d_fl
    g_bfl = np.array([d_fl.sum()])
    dh2 = d_ne[:, None] * params.w_ne + d_fl[:, None] * params.w_fl
    if cache.m2 is not None:
        dh2 = dh2 * cache.m2
    dz2 = dh2 * (cache.z2 > 0)
    g_w2 = cache.h1.T @ dz2
    g_b2 = dz2.sum(axis=0)
    dh1 = dz2 @ params.w2.T
    if cache.m1 is not None:
        dh1 = dh1 * cache.m1
    dz1 = dh1 * (cache.z1 > 0)
    g_w1 = cache.x.T @ dz1
    g_b1 = dz1.sum(axis=0)
    return [g_w1, g_b1, g_w2, g_b2, g_wne, g_bne, g_wfl, g_bfl]


def forward(params: MLPParams, x, train_mode: bool = False, seed: int | np.random.Generator | None = None):
    """Run one member on a single encoding or a batch of encodings.

    In train mode each trunk activation is multiplied by an inverted-dropout
    mask drawn from ``seed``; eval mode is deterministic.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != params.input_dim:
        raise ShapeError(f"expected input width {params.input_dim}, got {xb.shape[1]}")
    masks = None
    if train_mode and params.dropout > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        hidden = params.w1.shape[1]
        masks = (_dropout_mask(rng, (xb.shape[0], hidden), params.dropout),
                 _dropout_mask(rng, (xb.shape[0], hidden), params.dropout))
    ne, fl, _ = _forward(params, xb, masks)
    if single:
        return float(ne[0]), float(fl[0])
    return ne, fl


def all_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = ii != jj
    return ii[keep], jj[keep]


def pairwise_rank_loss(preds, labels, eps: float = 0.001, pairs=None) -> float:
    """Mean margin hinge ``max(0, -y_ij (p_i - p_j) + eps)`` over ordered pairs.

    ``y_ij`` is +1 when ``labels[i] > labels[j]`` and -1 when smaller; pairs
    with equal labels are skipped. ``pairs`` defaults to every ordered pair.
    """
    loss, _ = pairwise_rank_loss_grad(preds, labels, eps, pairs)
    return loss


def pairwise_rank_loss_grad(preds, labels, eps: float = 0.001, pairs=None) -> tuple[float, np.ndarray]:
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ShapeError(f"preds {preds.shape} and labels {labels.shape} must be equal-length vectors")
    if preds.shape[0] < 2:
        raise DegenerateBatchError("need at least 2 predictions")
    ii, jj = all_pairs(preds.shape[0]) if pairs is None else pairs
    total, n_valid, grad = kernels.hinge_pairs(preds, labels, ii, jj, float(eps))
    if n_valid == 0:
        raise DegenerateBatchError("no pair with distinct labels")
    return total / n_valid, grad / n_valid


def mse_loss(preds, labels) -> float:
    return mse_loss_grad(preds, labels)[0]


def mse_loss_grad(preds, labels) -> tuple[float, np.ndarray]:
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if preds.shape != labels.shape:
        raise ShapeError(f"preds {preds.shape} and labels {labels.shape} differ")
    r = preds - labels
    n = r.shape[0]
    return float(r @ r) / n, 2.0 * r / n


def batch_loss_and_grads(
    params: MLPParams,
    x: np.ndarray,
    ne_labels: np.ndarray,
    fl_labels: np.ndarray,
    cfg: TrainingConfig,
    pairs=None,
    masks=None,
    margins: tuple[float, float] | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Total loss (NE head + FLOPs head) and its parameter gradients.

    ``margins`` are the per-head hinge margins in the units of ``ne_labels`` and
    ``fl_labels`` (default ``cfg.margin`` for both).

    ``pairs`` are ordered row-index pairs into ``x``. The pairwise loss averages
    the hinge over them; MSE averages the squared error over every row
    occurrence in them, so both arms see the same sampled data. Without
    ``pairs`` every ordered pair (and every row once) is used.
    """
    ne, fl, cache = _forward(params, x, masks)
    if pairs is None:
        pairs = all_pairs(x.shape[0])
    rows = np.concatenate(pairs)
    n = x.shape[0]
    m_ne, m_fl = margins or (cfg.margin, cfg.margin)

    def mse_rows(pred, y):
        r = pred[rows] - y[rows]
        grad = np.bincount(rows, weights=2.0 * r / rows.shape[0], minlength=n)
        return float(r @ r) / rows.shape[0], grad

    if cfg.loss == "pairwise_rank":
        l_ne, d_ne = pairwise_rank_loss_grad(ne, ne_labels, m_ne, pairs)
        if cfg.flops_loss == "same":
            try:
                l_fl, d_fl = pairwise_rank_loss_grad(fl, fl_labels, m_fl, pairs)
            except DegenerateBatchError:
                l_fl, d_fl = 0.0, np.zeros_like(fl)
        else:
            l_fl, d_fl = mse_rows(fl, fl_labels)
    else:
        l_ne, d_ne = mse_rows(ne, ne_labels)
        l_fl, d_fl = mse_rows(fl, fl_labels)
    return l_ne + l_fl, _backward(params, cache, d_ne, d_fl)


class AdamW:
    """Adam with decoupled weight decay (decay applied before the Adam step)."""

    def __init__(self, arrays: Sequence[np.ndarray], lr=0.001, weight_decay=0.005, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.wd, self.betas, self.eps = lr, weight_decay, betas, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(arrays, grads, self.m, self.v):
            p *= 1.0 - self.lr * self.wd
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def label_stats(records: Sequence[TrainRecord]) -> dict:
    ne = np.array([r.ne_label for r in records])
    fl = np.array([r.flops_label for r in records])
    ne_sd = float(ne.std()) or 1.0
    fl_sd = float(fl.std()) or 1.0
    return {"ne_mean": float(ne.mean()), "ne_std": ne_sd, "flops_mean": float(fl.mean()), "flops_std": fl_sd}


def _design(records: Sequence[TrainRecord], stats: dict):
    x = np.stack([np.asarray(r.encoding, dtype=float) for r in records])
    ne = (np.array([r.ne_label for r in records]) - stats["ne_mean"]) / stats["ne_std"]
    fl = (np.array([r.flops_label for r in records]) - stats["flops_mean"]) / stats["flops_std"]
    return x, ne, fl


def _flat_params(params: MLPParams) -> tuple[MLPParams, np.ndarray]:
    """Copy ``params`` into one contiguous buffer and return views onto it."""
    arrays = params.arrays()
    flat = np.concatenate([a.ravel() for a in arrays])
    views, pos = [], 0
    for a in arrays:
        views.append(flat[pos : pos + a.size].reshape(a.shape))
        pos += a.size
    return MLPParams(*views, dropout=params.dropout), flat


def train_member(records: Sequence[TrainRecord], cfg: TrainingConfig, seed: int,
                 stats: dict | None = None, member: int | None = None) -> MLPParams:
    """Train one MLP on ``records``; fully determined by ``(records, cfg, seed)``."""
    if len(records) < 2 or len({r.ne_label for r in records}) < 2:
        raise DegenerateBatchError("need at least 2 records with distinct NE labels")
    stats = stats or label_stats(records)
    x, ne, fl = _design(records, stats)
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    params, flat = _flat_params(init_params(x.shape[1], rng, cfg.hidden, cfg.dropout))
    opt = AdamW([flat], cfg.lr, cfg.weight_decay)
    # the margin is given in NE-label units; training runs on z-scored labels,
    # and the FLOPs head gets the same standardised margin so neither head
    # is left with a vanishing one
    m = cfg.margin / stats["ne_std"]
    margins = (m, m)
    p = cfg.batch_pairs
    for epoch in range(cfg.epochs):
        ii = rng.integers(0, n, p)
        jj = (ii + rng.integers(1, n, p)) % n
        masks = None
        if cfg.dropout > 0:
            # one mask per record per epoch; pairs sharing a record share it
            masks = _dropout_mask(rng, (2, n, cfg.hidden), cfg.dropout)
        try:
            loss, grads = batch_loss_and_grads(params, x, ne, fl, cfg, (ii, jj), masks, margins)
        except DegenerateBatchError:
            continue
        g = np.concatenate([a.ravel() for a in grads])
        if not (math.isfinite(loss) and np.isfinite(g).all()):
            raise DivergenceError(epoch, member)
        opt.step([flat], [g])
    return params


@dataclass
class PredictorEnsemble:
    members: list[MLPParams]
    label_stats: dict
    config: TrainingConfig = field(default_factory=TrainingConfig)
    space_name: str = ""
    space_version: int = 0

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        dims = {m.input_dim for m in self.members}
        if len(dims) != 1:
            raise ShapeError(f"members disagree on input width: {sorted(dims)}")

    @property
    def k(self) -> int:
        return len(self.members)

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    @cached_property
    def _stacked(self) -> list[np.ndarray]:
        return [np.stack([getattr(m, n) for m in self.members]) for n in PARAM_NAMES]

    def predict_batch(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Mean member output per task, de-standardised, for a batch of encodings."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"expected input width {self.input_dim}, got {x.shape[1]}")
        w1, b1, w2, b2, wne, bne, wfl, bfl = self._stacked
        h1 = np.maximum(x[None] @ w1 + b1[:, None, :], 0.0)
        h2 = np.maximum(h1 @ w2 + b2[:, None, :], 0.0)
        ne = np.einsum("knh,kh->kn", h2, wne) + bne
        fl = np.einsum("knh,kh->kn", h2, wfl) + bfl
        s = self.label_stats
        return ne.mean(axis=0) * s["ne_std"] + s["ne_mean"], fl.mean(axis=0) * s["flops_std"] + s["flops_mean"]

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "space": {"name": self.space_name, "version": self.space_version},
            "training_config": asdict(self.config),
            "label_stats": self.label_stats,
            "members": [m.to_dict() for m in self.members],
        }

    @classmethod
    def from_dict(cls, d: dict) -> PredictorEnsemble:
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        return cls(
            [MLPParams.from_dict(m) for m in d["members"]],
            dict(d["label_stats"]),
            TrainingConfig.from_dict(d.get("training_config", {})),
            d["space"]["name"],
            int(d["space"]["version"]),
        )

    def save(self, path: str | Path) -> str:
        """Write the checkpoint as JSON and return its sha256."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        Path(path).write_text(text, encoding="utf-8")
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> PredictorEnsemble:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def train_ensemble(records: Sequence[TrainRecord], cfg: TrainingConfig | None = None, k: int = 10,
                   seed: int | None = None, space_name: str = "", space_version: int = 0) -> PredictorEnsemble:
    """Train ``k`` members with seeds ``seed .. seed+k-1`` on the full record set."""
    cfg = cfg or TrainingConfig()
    if k < 1:
        raise ValueError("k must be >= 1")
    seed = cfg.seed if seed is None else seed
    stats = label_stats(records)
    members = [train_member(records, cfg, seed + j, stats, member=j) for j in range(k)]
    return PredictorEnsemble(members, stats, cfg, space_name, space_version)


def predict(ensemble: PredictorEnsemble, x) -> tuple[float, float]:
    """Ensemble mean ``(ne_gain, log10_flops)`` for one encoding."""
    ne, fl = ensemble.predict_batch(np.asarray(x, dtype=float).reshape(1, -1))
    return float(ne[0]), float(fl[0])


class RankQuality(NamedTuple):
    tau_ne: float
    tau_flops: float

    @property
    def defined(self) -> bool:
        return not (math.isnan(self.tau_ne) or math.isnan(self.tau_flops))


def evaluate_rank_quality(ensemble: PredictorEnsemble, holdout: Sequence[TrainRecord]) -> RankQuality:
    """Kendall tau-b between predictions and labels per task (NaN when undefined)."""
    if len(holdout) < 5:
        raise ValueError(f"holdout needs at least 5 records, got {len(holdout)}")
    x = np.stack([np.asarray(r.encoding, dtype=float) for r in holdout])
    ne, fl = ensemble.predict_batch(x)
    return RankQuality(
        kendall_tau(ne, [r.ne_label for r in holdout]),
        kendall_tau(fl, [r.flops_label for r in holdout]),
    )
