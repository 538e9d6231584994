"""Searchers over a trained predictor.

The main searcher learns independent per-decision categorical distributions
with REINFORCE, minimising ``(1 - alpha) * z(NE) + alpha * z(log FLOPs)`` as
predicted by the ensemble. Random search and a GP/expected-improvement
Bayesian optimiser are provided as baselines.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.stats import norm

from . import kernels
from .errors import PoisonedBatchError, SingularKernelError
from .predictor import PredictorEnsemble
from .space import Config, IndexCodec, SearchSpace, encode_config, enumerate_configs, random_config

FLOAT_LEVELS = 8


@dataclass
class Policy:
    """Per-decision logits; sampling uses ``softmax(logits / temperature)``.

    ``choices`` and ``names`` label the blocks so index rows can be turned
    back into configs; a bare policy (logits only) can still sample indices.
    """

    logits: list[np.ndarray]
    temperature: float = 1.0
    choices: list[tuple] | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        self.logits = [np.asarray(b, dtype=float) for b in self.logits]

    @classmethod
    def uniform(cls, space: SearchSpace, temperature: float = 1.0, levels: int = FLOAT_LEVELS) -> Policy:
        choices = [d.grid(levels) for d in space.decisions]
        return cls([np.zeros(len(c)) for c in choices], temperature, choices, tuple(space.names))

    @property
    def sizes(self) -> list[int]:
        return [b.shape[0] for b in self.logits]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)

    def probs(self) -> list[np.ndarray]:
        out = []
        for b in self.logits:
            z = b / self.temperature
            e = np.exp(z - z.max())
            out.append(e / e.sum())
        return out

    def flat_logits(self) -> np.ndarray:
        return np.concatenate(self.logits)

    def with_flat_logits(self, flat: np.ndarray) -> Policy:
        blocks = np.split(np.asarray(flat, dtype=float), np.cumsum(self.sizes)[:-1])
        return replace(self, logits=list(blocks))

    def log_prob(self, idx: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(idx)
        out = np.zeros(idx.shape[0])
        for j, p in enumerate(self.probs()):
            out += np.log(p[idx[:, j]])
        return out

    def to_config(self, row) -> Config:
        if self.choices is None or self.names is None:
            raise ValueError("policy has no choice labels; build it with Policy.uniform")
        return Config({n: ch[int(i)] for n, ch, i in zip(self.names, self.choices, row)})

    def to_index(self, config: Mapping) -> np.ndarray:
        if self.choices is None or self.names is None:
            raise ValueError("policy has no choice labels; build it with Policy.uniform")
        out = []
        for name, ch in zip(self.names, self.choices):
            v = config[name]
            if v in ch:
                out.append(ch.index(v))
            else:
                out.append(int(np.argmin(np.abs(np.asarray(ch, dtype=float) - float(v)))))
        return np.array(out, dtype=np.int64)


@dataclass
class Baseline:
    """Exponential moving average of batch-mean rewards; starts at the first batch mean."""

    value: float | None = None
    decay: float = 0.9

    def updated(self, batch_mean: float) -> Baseline:
        if self.value is None:
            return Baseline(batch_mean, self.decay)
        return Baseline(self.decay * self.value + (1 - self.decay) * batch_mean, self.decay)


@dataclass
class RewardSpec:
    alpha: float = 0.0
    ne_mean: float = 0.0
    ne_std: float = 1.0
    flops_mean: float = 0.0
    flops_std: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.ne_std <= 0 or self.flops_std <= 0:
            raise ValueError("normalisation std must be positive")

    @classmethod
    def from_predictions(cls, ensemble: PredictorEnsemble, encodings, alpha: float) -> RewardSpec:
        """Normalise by the ensemble's predictions over ``encodings`` (its training rows)."""
        ne, fl = ensemble.predict_batch(np.asarray(encodings, dtype=float))
        return cls(alpha, float(ne.mean()), float(ne.std()) or 1.0, float(fl.mean()), float(fl.std()) or 1.0)

    def score(self, ne: np.ndarray, log_flops: np.ndarray) -> np.ndarray:
        return ((1 - self.alpha) * (np.asarray(ne) - self.ne_mean) / self.ne_std
                + self.alpha * (np.asarray(log_flops) - self.flops_mean) / self.flops_std)


@dataclass
class RLConfig:
    lr: float = 0.01
    anneal_rate: float = 0.9997
    start_temperature: float = 1.0
    min_temperature: float = 1.0
    steps: int = 2000
    batch: int = 32
    seeds: tuple[int, ...] = (0, 1, 2)
    top_k: int = 10
    baseline_decay: float = 0.9
    float_levels: int = FLOAT_LEVELS

    def __post_init__(self) -> None:
        self.seeds = tuple(int(s) for s in self.seeds)
        if not 0.0 < self.anneal_rate <= 1.0:
            raise ValueError("anneal_rate must be in (0, 1]")
        if self.min_temperature > self.start_temperature:
            raise ValueError("min_temperature must not exceed start_temperature")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> RLConfig:
        d = dict(d)
        if "temperatures" in d:
            t = d.pop("temperatures")
            if isinstance(t, Mapping):
                d.setdefault("start_temperature", t.get("start", 1.0))
                d.setdefault("min_temperature", t.get("min", 1.0))
            else:
                d.setdefault("start_temperature", t[0])
                d.setdefault("min_temperature", t[1])
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class SearchEntry:
    config: Config
    predicted_ne: float
    predicted_flops: float
    reward: float
    seed: int
    step: int


@dataclass(frozen=True)
class TraceRow:
    step: int
    seed: int
    batch_mean_reward: float
    running_best: float
    batch_mean_ne: float
    best_ne: float


@dataclass
class SearchResult:
    entries: list[SearchEntry]
    trace: list[TraceRow] = field(default_factory=list)
    alpha: float = 0.0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def configs(self) -> list[Config]:
        return [e.config for e in self.entries]

    @property
    def best(self) -> SearchEntry:
        return self.entries[0]


class ConfigBatch(list):
    """List of configs that also reports whether the space ran out."""

    exhausted: bool = False


def reward(ensemble: PredictorEnsemble, config: Mapping, spec: RewardSpec, space: SearchSpace) -> float:
    """Scalar reward of one config; lower is better."""
    ne, fl = ensemble.predict_batch(encode_config(space, config).reshape(1, -1))
    return float(spec.score(ne, fl)[0])


def sample_indices(policy: Policy, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` index rows, one categorical draw per decision (inverse CDF)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    probs = policy.probs()
    u = rng.random((n, len(probs)))
    out = np.empty((n, len(probs)), dtype=np.int64)
    for j, p in enumerate(probs):
        cdf = np.cumsum(p)
        out[:, j] = np.minimum(np.searchsorted(cdf, u[:, j] * cdf[-1], side="right"), p.shape[0] - 1)
    return out


def sample_configs(policy: Policy, n: int, seed: int | np.random.Generator) -> list[Config]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [policy.to_config(row) for row in sample_indices(policy, n, rng)]


def score_function_gradient(policy: Policy, idx: np.ndarray, advantages: np.ndarray) -> np.ndarray:
    """Batch mean of ``advantage * d log p(x) / d logits`` as a flat vector."""
    flat_probs = np.concatenate(policy.probs())
    return kernels.score_grad(np.atleast_2d(idx), advantages, flat_probs, policy.offsets, policy.temperature)


def reinforce_update(policy: Policy, idx: np.ndarray, rewards: np.ndarray, baseline: Baseline,
                     lr: float) -> tuple[Policy, Baseline]:
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(rewards)):
        raise PoisonedBatchError("non-finite reward in batch")
    mean = float(rewards.mean())
    b = mean if baseline.value is None else baseline.value
    g = score_function_gradient(policy, idx, rewards - b)
    # rewards are minimised, so step against the gradient
    return policy.with_flat_logits(policy.flat_logits() - lr * g), baseline.updated(mean)


def reinforce_step(policy: Policy, batch_rewards: Sequence[tuple[Mapping, float]], baseline: Baseline,
                   lr: float) -> tuple[Policy, Baseline]:
    """One REINFORCE update from ``(config, reward)`` pairs."""
    if not batch_rewards:
        raise ValueError("empty batch")
    idx = np.stack([policy.to_index(c) for c, _ in batch_rewards])
    return reinforce_update(policy, idx, np.array([r for _, r in batch_rewards], dtype=float), baseline, lr)


def anneal(policy: Policy, anneal_rate: float, min_temperature: float) -> Policy:
    return replace(policy, temperature=max(min_temperature, policy.temperature * anneal_rate))


def _run_seed(ensemble, codec: IndexCodec, spec: RewardSpec, cfg: RLConfig, seed: int, seen: dict, trace: list):
    rng = np.random.default_rng(seed)
    policy = Policy([np.zeros(s) for s in codec.sizes], cfg.start_temperature)
    baseline = Baseline(decay=cfg.baseline_decay)
    best, best_ne = math.inf, math.nan
    for step in range(cfg.steps):
        idx = sample_indices(policy, cfg.batch, rng)
        ne, fl = ensemble.predict_batch(codec.encode(idx))
        r = spec.score(ne, fl)
        k = int(np.argmin(r))
        if r[k] < best:
            best, best_ne = float(r[k]), float(ne[k])
        for row, ri, ni, fi in zip(map(tuple, idx.tolist()), r, ne, fl):
            # the predictor is deterministic, so the first sighting is kept
            if row not in seen:
                seen[row] = (float(ri), float(ni), float(fi), seed, step)
        trace.append(TraceRow(step, seed, float(r.mean()), best, float(ne.mean()), best_ne))
        policy, baseline = reinforce_update(policy, idx, r, baseline, cfg.lr)
        policy = anneal(policy, cfg.anneal_rate, cfg.min_temperature)
    return policy


def run_rl_search(ensemble: PredictorEnsemble, space: SearchSpace, spec: RewardSpec,
                  cfg: RLConfig | None = None) -> SearchResult:
    """REINFORCE search, one independent run per seed, merged into a top-k list.

    Every sampled config is remembered with its reward and the (seed, step)
    where it first appeared; the merged list is deduplicated and sorted by
    reward (ties broken by config key for determinism).
    """
    cfg = cfg or RLConfig()
    if ensemble.space_version and ensemble.space_version != space.version:
        raise ValueError(f"ensemble trained on space version {ensemble.space_version}, got {space.version}")
    codec = IndexCodec(space, cfg.float_levels)
    seen: dict[tuple, tuple] = {}
    trace: list[TraceRow] = []
    for seed in cfg.seeds:
        _run_seed(ensemble, codec, spec, cfg, seed, seen, trace)
    ranked = sorted(seen.items(), key=lambda kv: (kv[1][0], kv[0]))[: cfg.top_k]
    entries = [
        SearchEntry(codec.to_config(np.array(row)), ne, float(10.0**fl), r, s, st)
        for row, (r, ne, fl, s, st) in ranked
    ]
    return SearchResult(entries, trace, spec.alpha)


def run_random_search(space: SearchSpace, n: int, seed: int) -> ConfigBatch:
    """``n`` distinct uniform configs; if the space is smaller, all of them with ``exhausted`` set."""
    rng = np.random.default_rng(seed)
    out = ConfigBatch()
    size = space.size()
    if size <= n:
        allc = list(enumerate_configs(space))
        order = rng.permutation(len(allc))
        out.extend(allc[i] for i in order)
        out.exhausted = True
        return out
    seen = set()
    while len(out) < n:
        c = random_config(space, rng)
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


def predicted_random_search(ensemble: PredictorEnsemble, space: SearchSpace, spec: RewardSpec,
                            steps: int, batch: int, seed: int) -> list[TraceRow]:
    """Uniform sampling scored by the predictor, traced like an RL run."""
    codec = IndexCodec(space)
    rng = np.random.default_rng(seed)
    uniform = Policy([np.zeros(s) for s in codec.sizes], 1.0)
    trace, best, best_ne = [], math.inf, math.nan
    for step in range(steps):
        idx = sample_indices(uniform, batch, rng)
        ne, fl = ensemble.predict_batch(codec.encode(idx))
        r = spec.score(ne, fl)
        k = int(np.argmin(r))
        if r[k] < best:
            best, best_ne = float(r[k]), float(ne[k])
        trace.append(TraceRow(step, seed, float(r.mean()), best, float(ne.mean()), best_ne))
    return trace


# Gaussian-process baseline


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


class GaussianProcess:
    """Zero-mean GP with an RBF kernel on z-scored targets."""

    LENGTHSCALES = (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0)
    NOISES = (1e-6, 1e-3, 1e-2, 0.05, 0.1)

    def __init__(self, lengthscale: float | None = None, noise: float | None = None, max_jitter_tries: int = 6):
        self.lengthscale = lengthscale
        self.noise = noise
        self.max_jitter_tries = max_jitter_tries

    def _chol(self, k: np.ndarray, noise: float) -> np.ndarray:
        jitter = noise
        for _ in range(self.max_jitter_tries):
            try:
                return cholesky(k + jitter * np.eye(k.shape[0]), lower=True)
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10.0, 1e-10)
        raise SingularKernelError(f"kernel matrix not positive definite after jitter {jitter:g}")

    def _lml(self, d2, y, ls, noise) -> float:
        k = np.exp(-0.5 * d2 / ls**2)
        L = self._chol(k, noise)
        a = cho_solve((L, True), y)
        return float(-0.5 * y @ a - np.log(np.diag(L)).sum())

    def fit(self, x: np.ndarray, y: np.ndarray) -> GaussianProcess:
        self.x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self.y_mean = float(y.mean())
        self.y_std = float(y.std()) or 1.0
        self.yz = (y - self.y_mean) / self.y_std
        d2 = _sqdist(self.x, self.x)
        if self.lengthscale is None or self.noise is None:
            grid = [(ls, nz) for ls in self.LENGTHSCALES for nz in self.NOISES]
            scores = [self._lml(d2, self.yz, ls, nz) for ls, nz in grid]
            self.lengthscale, self.noise = grid[int(np.argmax(scores))]
        self._factor(d2)
        return self

    def _factor(self, d2) -> None:
        k = np.exp(-0.5 * d2 / self.lengthscale**2)
        self.L = self._chol(k, self.noise)
        self.alpha_ = cho_solve((self.L, True), self.yz)

    def predict(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ks = np.exp(-0.5 * _sqdist(np.asarray(xs, dtype=float), self.x) / self.lengthscale**2)
        mu = ks @ self.alpha_
        v = cho_solve((self.L, True), ks.T)
        var = np.maximum(1.0 - np.einsum("ij,ji->i", ks, v), 0.0)
        return mu * self.y_std + self.y_mean, np.sqrt(var) * self.y_std


def expected_improvement(mu, sigma, best: float, xi: float = 0.0) -> np.ndarray:
    """EI for minimisation; zero wherever ``sigma == 0`` and ``mu >= best``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = best - mu - xi
    out = np.maximum(imp, 0.0)
    pos = sigma > 0
    z = imp[pos] / sigma[pos]
    out[pos] = imp[pos] * norm.cdf(z) + sigma[pos] * norm.pdf(z)
    return out


def run_bo_search(records: Sequence, space: SearchSpace, n_new: int, seed: int, pool_size: int = 5000) -> list[Config]:
    """Propose ``n_new`` configs by EI over a random pool, batching with a constant liar.

    ``records`` need ``encoding`` plus ``ne_label`` (or ``long_term_ne``).
    Hyperparameters are fitted once on the real observations; each pick is then
    added with the incumbent value as a hallucinated observation.
    """
    if len(records) < 5:
        raise ValueError(f"BO needs at least 5 records, got {len(records)}")
    x = np.stack([np.asarray(r.encoding, dtype=float) for r in records])
    y = np.array([r.ne_label if hasattr(r, "ne_label") else r.long_term_ne for r in records], dtype=float)
    known = {tuple(row) for row in x}
    rng = np.random.default_rng(seed)
    pool_cfgs, pool_x, seen = [], [], set(known)
    size = space.size()
    target = min(pool_size, int(size - len(known)) if math.isfinite(size) else pool_size)
    tries = 0
    while len(pool_cfgs) < target and tries < 50 * pool_size:
        tries += 1
        c = random_config(space, rng)
        e = encode_config(space, c)
        key = tuple(e)
        if key in seen:
            continue
        seen.add(key)
        pool_cfgs.append(c)
        pool_x.append(e)
    pool_x = np.array(pool_x)
    gp = GaussianProcess().fit(x, y)
    lie = float(y.min())
    xs, ys = x, y
    available = np.ones(len(pool_cfgs), dtype=bool)
    picks: list[Config] = []
    for _ in range(min(n_new, len(pool_cfgs))):
        mu, sd = gp.predict(pool_x)
        ei = expected_improvement(mu, sd, float(ys.min()))
        ei[~available] = -np.inf
        k = int(np.argmax(ei))
        picks.append(pool_cfgs[k])
        available[k] = False
        xs = np.vstack([xs, pool_x[k]])
        ys = np.append(ys, lie)
        gp.x = xs
        gp.yz = (ys - gp.y_mean) / gp.y_std
        gp._factor(_sqdist(xs, xs))
    return picks
