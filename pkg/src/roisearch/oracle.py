"""Seeded synthetic trial oracle.

Stands in for real model training: every config gets a power-law learning
curve ``ne(t) = a + b * t**-gamma + noise`` on a 25-point grid, plus a
deterministic FLOPs count. ``a`` is the hidden long-term NE gain.

All surfaces are regenerated from ``(space, seed)``; nothing random is stored.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .curves import LearningCurve, truncate
from .errors import NotEnumerableError
from .space import Config, IndexCodec, SearchSpace, binary_space, config_id

GRID_POINTS = 25
GRID = np.arange(1, GRID_POINTS + 1)

MAIN_EFFECT_RANGE = (-0.001, 0.0002)
INTERACTION_FRACTION = 0.10
INTERACTION_SCALE = 0.0003
INTERACTION_DF = 1.5
INTERACTION_CLIP = 0.004
BASE_FLOPS = 1.0e6
DEFAULT_NOISE = 2.0e-6

# curve shape; calibrated so 20 pilots reach tau ~0.8 near 40% of the horizon
CURVE_B0 = 1.0e-4
CURVE_GAMMA0 = 0.25
SLOW_COUPLING = 1.3
SLOW_NOISE = 0.1
RATE_NOISE = 0.05


def canonical_benchmark(seed: int = 7, noise_std: float = DEFAULT_NOISE) -> SynthBenchmark:
    """The 18-binary-decision benchmark used throughout the tests."""
    return make_benchmark(binary_space(18, name="dhen18"), seed, noise_std)


def _numeric_sizes(values) -> np.ndarray | None:
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
        return None
    arr = np.array(values, dtype=float)
    if np.all(arr > 0):
        return arr
    return None


@dataclass(frozen=True)
class SynthBenchmark:
    space: SearchSpace
    seed: int
    noise_std: float = DEFAULT_NOISE

    def __post_init__(self) -> None:
        if not self.space.is_categorical:
            raise NotEnumerableError("the oracle needs a categorical (or pre-discretised) space")

    @cached_property
    def codec(self) -> IndexCodec:
        return IndexCodec(self.space)

    @cached_property
    def _tables(self) -> dict:
        rng = np.random.default_rng([self.seed, 0x5EA7])
        decs = self.space.decisions
        lo, hi = MAIN_EFFECT_RANGE
        main, slow, rate, cost = [], [], [], []
        for d in decs:
            n = len(d.values)
            eff = np.concatenate([[0.0], rng.uniform(lo, hi, n - 1)])
            sizes = _numeric_sizes(d.values)
            if sizes is not None:
                factors = sizes / sizes.min()
            else:
                benefit = np.clip(-eff / -lo, 0.0, None)
                factors = 1.0 + 0.8 * benefit + rng.uniform(0.0, 0.5, n) * (np.arange(n) > 0)
                factors[0] = 1.0
            log_f = np.log(factors)
            # choices that help long-term start worse: larger transient amplitude
            active = np.arange(n) > 0
            slow_eff = rng.normal(0.0, SLOW_NOISE, n) * active
            rate_eff = rng.normal(0.0, RATE_NOISE, n) * active
            main.append(eff)
            slow.append(slow_eff)
            rate.append(rate_eff)
            cost.append(factors)
        pairs = list(itertools.combinations(range(len(decs)), 2))
        n_inter = int(round(INTERACTION_FRACTION * len(pairs)))
        chosen = sorted(rng.choice(len(pairs), size=n_inter, replace=False).tolist()) if n_inter else []
        inter = []
        for k in chosen:
            i, j = pairs[k]
            ni, nj = len(decs[i].values), len(decs[j].values)
            if INTERACTION_DF > 0:
                tab = np.clip(INTERACTION_SCALE * rng.standard_t(INTERACTION_DF, (ni, nj)), -INTERACTION_CLIP, INTERACTION_CLIP)
            else:
                tab = rng.uniform(-INTERACTION_SCALE, INTERACTION_SCALE, (ni, nj))
            tab[0, :] = 0.0
            tab[:, 0] = 0.0
            inter.append((i, j, tab))
        return {"main": main, "slow": slow, "rate": rate, "cost": cost, "inter": inter}

    @property
    def ne_surface(self) -> dict:
        t = self._tables
        return {"main": t["main"], "interactions": t["inter"]}

    @property
    def flops_model(self) -> list[np.ndarray]:
        return self._tables["cost"]

    # vectorised surfaces over index arrays of shape (n, n_decisions)

    def asymptotes(self, idx: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(idx)
        t = self._tables
        out = np.zeros(idx.shape[0])
        for j, eff in enumerate(t["main"]):
            out += eff[idx[:, j]]
        for i, j, tab in t["inter"]:
            out += tab[idx[:, i], idx[:, j]]
        return out

    def curve_params(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = np.atleast_2d(idx)
        t = self._tables
        log_b = np.full(idx.shape[0], np.log(CURVE_B0))
        log_g = np.full(idx.shape[0], np.log(CURVE_GAMMA0))
        for j in range(idx.shape[1]):
            log_b += t["slow"][j][idx[:, j]]
            log_g += t["rate"][j][idx[:, j]]
        a = self.asymptotes(idx)
        # better asymptotes carry a proportionally larger early transient
        b = np.exp(log_b) + SLOW_COUPLING * np.clip(-a, 0.0, None)
        return a, b, np.exp(log_g)

    def log_flops(self, idx: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(idx)
        out = np.full(idx.shape[0], np.log(BASE_FLOPS))
        for j, f in enumerate(self._tables["cost"]):
            out += np.log(f[idx[:, j]])
        return out

    def to_dict(self) -> dict:
        return {"space": self.space.to_dict(), "seed": self.seed, "noise_std": self.noise_std}

    @classmethod
    def from_dict(cls, d: Mapping) -> SynthBenchmark:
        return make_benchmark(SearchSpace.from_dict(d["space"]), int(d["seed"]), float(d.get("noise_std", DEFAULT_NOISE)))


@dataclass(frozen=True)
class EvalResult:
    config_id: str
    config: Config
    curve: LearningCurve
    flops: float
    fidelity_fraction: float
    cost: float
    true_long_term_ne: float = field(repr=False)


def make_benchmark(space: SearchSpace, seed: int, noise_std: float = DEFAULT_NOISE) -> SynthBenchmark:
    return SynthBenchmark(space, int(seed), float(noise_std))


def _noise_seed(bench: SynthBenchmark, cid: str, seed: int) -> list[int]:
    h = int(hashlib.sha256(cid.encode()).hexdigest()[:12], 16)
    return [bench.seed, h, int(seed)]


def full_curve(bench: SynthBenchmark, config: Mapping, seed: int = 0) -> tuple[np.ndarray, float]:
    bench.space.validate(config)
    idx = bench.codec.to_index(config)
    a, b, g = (float(x[0]) for x in bench.curve_params(idx))
    values = a + b * GRID.astype(float) ** (-g)
    if bench.noise_std > 0:
        rng = np.random.default_rng(_noise_seed(bench, config_id(bench.space, config), seed))
        values = values + rng.normal(0.0, bench.noise_std, GRID_POINTS)
    return values, a


def evaluate(bench: SynthBenchmark, config: Mapping, fidelity_fraction: float = 1.0, seed: int = 0) -> EvalResult:
    """Simulate training ``config`` on ``fidelity_fraction`` of the data.

    The truncated curve is a prefix of the full-fidelity curve for the same
    ``seed``; cost is charged in full-evaluation units.
    """
    if not 0.0 < fidelity_fraction <= 1.0:
        raise ValueError(f"fidelity_fraction must be in (0, 1], got {fidelity_fraction}")
    values, a = full_curve(bench, config, seed)
    curve = truncate(LearningCurve.from_arrays(GRID.tolist(), values.tolist()), fidelity_fraction)
    cfg = Config(config)
    return EvalResult(
        config_id=config_id(bench.space, cfg),
        config=cfg,
        curve=curve,
        flops=flops_of(bench, cfg),
        fidelity_fraction=float(fidelity_fraction),
        cost=float(fidelity_fraction),
        true_long_term_ne=a,
    )


def flops_of(bench: SynthBenchmark, config: Mapping) -> float:
    bench.space.validate(config)
    idx = bench.codec.to_index(config)
    out = BASE_FLOPS
    for j, f in enumerate(bench.flops_model):
        out *= float(f[idx[j]])
    return out


def true_long_term_ne(bench: SynthBenchmark, config: Mapping) -> float:
    return float(bench.asymptotes(bench.codec.to_index(config))[0])


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else x - x.mean()


def true_optimum(bench: SynthBenchmark, alpha: float) -> tuple[Config, float]:
    """Exact minimiser of ``(1-alpha)*z(true NE) + alpha*z(log FLOPs)`` by enumeration."""
    idx = bench.codec.all_indices()
    score = (1 - alpha) * _zscore(bench.asymptotes(idx)) + alpha * _zscore(bench.log_flops(idx))
    best = int(np.argmin(score))
    return bench.codec.to_config(idx[best]), float(score[best])


def save_benchmark_spec(bench: SynthBenchmark, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bench.to_dict(), fh, indent=2)
        fh.write("\n")
