"""Reusable experiment protocols on the synthetic oracle.

Each function here is one step of the search workflow (pilots, fidelity
choice, predictor training, search, validation) or one of the comparison
protocols built from them. The CLI and the acceptance suite both call these.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .curves import FidelityReport, LearningCurve, select_fidelity
from .oracle import GRID_POINTS, SynthBenchmark, evaluate, true_long_term_ne
from .predictor import TrainingConfig, evaluate_rank_quality, train_ensemble
from .sampler import RewardSpec, RLConfig, run_bo_search, run_random_search, run_rl_search
from .space import Config, config_id
from .store import TrialRecord, make_record, to_train_record, warm_start_pool

FIXED_TIMESTAMP = "1970-01-01T00:00:00+00:00"


def evaluate_trials(bench: SynthBenchmark, configs: Sequence[Config], fraction: float, source: str,
                    timestamp: str | None = None, seed: int = 0) -> list[TrialRecord]:
    """Run the oracle on ``configs`` and wrap each result as a TrialRecord."""
    out = []
    for c in configs:
        r = evaluate(bench, c, fraction, seed)
        out.append(make_record(bench.space, c, r.curve.points, r.flops, fraction, source, GRID_POINTS, timestamp))
    return out


def pilot_configs(bench: SynthBenchmark, n: int, seed: int) -> list[Config]:
    return list(run_random_search(bench.space, n, seed))


def fidelity_reports(pilots: Sequence[TrialRecord], **kwargs) -> dict[str, FidelityReport]:
    """Fidelity selection under both metrics from full-fidelity pilot trials."""
    curves = [LearningCurve(p.curve) for p in pilots if p.fidelity_fraction == 1.0]
    return {m: select_fidelity(curves, m, **kwargs) for m in ("raw", "extrapolated")}


def pilot_fidelity(bench: SynthBenchmark, n_pilots: int = 20, seed: int = 0) -> dict[str, FidelityReport]:
    pil = evaluate_trials(bench, pilot_configs(bench, n_pilots, seed), 1.0, "pilot", FIXED_TIMESTAMP)
    return fidelity_reports(pil)


def build_dataset(bench: SynthBenchmark, n: int, fraction: float, seed: int) -> list[TrialRecord]:
    """``n`` distinct random trials at ``fraction`` fidelity."""
    return evaluate_trials(bench, list(run_random_search(bench.space, n, seed)), fraction, "random", FIXED_TIMESTAMP)


@dataclass(frozen=True)
class AblationArm:
    name: str
    loss: str = "pairwise_rank"
    k: int = 10


def ablation_taus(train: Sequence[TrialRecord], val: Sequence[TrialRecord], arms: Sequence[AblationArm],
                  seed: int, base: TrainingConfig | None = None) -> dict[str, float]:
    """Validation Kendall tau on NE for each arm, all trained on the same split."""
    base = base or TrainingConfig()
    tr = warm_start_pool(train)
    va = warm_start_pool(val)
    out = {}
    for arm in arms:
        cfg = TrainingConfig.from_dict({**base.__dict__, "loss": arm.loss})
        ens = train_ensemble(tr, cfg, k=arm.k, seed=seed)
        out[arm.name] = evaluate_rank_quality(ens, va).tau_ne
    return out


@dataclass
class ArmOutcome:
    name: str
    configs: list[Config]
    true_ne: list[float]

    @property
    def incumbent(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.true_ne))

    @property
    def best(self) -> float:
        return float(np.min(self.true_ne))


@dataclass
class Comparison:
    arms: dict[str, ArmOutcome]
    warm_ids: list[str] = field(default_factory=list)

    def ordered(self) -> bool:
        """RL <= BO <= random in best-found true long-term NE."""
        return self.arms["rl"].best <= self.arms["bo"].best <= self.arms["random"].best


def compare_searchers(bench: SynthBenchmark, fraction: float, budget: int = 150, warm: int = 75, seed: int = 0,
                      rl_cfg: RLConfig | None = None, train_cfg: TrainingConfig | None = None, k: int = 10,
                      alpha: float = 0.0, rounds: int = 1) -> Comparison:
    """Random vs BO vs predictor-RL under a shared random warm start.

    Random search spends the whole budget. BO and RL reuse the first ``warm``
    random trials and each propose ``budget - warm`` new ones; with
    ``rounds > 1`` the RL arm retrains its predictor on the trials validated
    so far between rounds. Outcomes are the oracle's true long-term NE of
    every evaluated config, in trial order.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if budget < warm:
        raise ValueError(f"budget {budget} is smaller than the warm start {warm}")
    n_new = budget - warm
    rnd_cfgs = list(run_random_search(bench.space, budget, seed))
    rnd_trials = evaluate_trials(bench, rnd_cfgs, fraction, "random", FIXED_TIMESTAMP)
    warm_trials = rnd_trials[:warm]

    def truth(cfgs):
        return [true_long_term_ne(bench, c) for c in cfgs]

    arms = {"random": ArmOutcome("random", rnd_cfgs, truth(rnd_cfgs))}

    warm_cfgs = [t.config for t in warm_trials]
    warm_recs = [to_train_record(t) for t in warm_trials]
    bo_new = run_bo_search(warm_recs, bench.space, n_new, seed)
    arms["bo"] = ArmOutcome("bo", warm_cfgs + bo_new, truth(warm_cfgs + bo_new))

    cfg = rl_cfg or RLConfig()
    trials = list(warm_trials)
    known = {t.config_id for t in trials}
    rl_new: list[Config] = []
    for r in range(rounds):
        quota = n_new // rounds + (1 if r < n_new % rounds else 0)
        recs = [to_train_record(t) for t in trials]
        ens = train_ensemble(recs, train_cfg or TrainingConfig(), k=k, seed=seed + r,
                             space_name=bench.space.name, space_version=bench.space.version)
        spec = RewardSpec.from_predictions(ens, np.stack([x.encoding for x in recs]), alpha)
        round_seeds = tuple(s + r * len(cfg.seeds) for s in cfg.seeds)
        res = run_rl_search(ens, bench.space, spec, replace(cfg, seeds=round_seeds, top_k=quota + len(known)))
        picks = [c for c in res.configs if config_id(bench.space, c) not in known][:quota]
        done = evaluate_trials(bench, picks, fraction, "rl", FIXED_TIMESTAMP)
        trials += done
        known |= {t.config_id for t in done}
        rl_new += picks
    arms["rl"] = ArmOutcome("rl", warm_cfgs + rl_new, truth(warm_cfgs + rl_new))
    return Comparison(arms, [t.config_id for t in warm_trials])


__all__ = [
    "AblationArm",
    "ArmOutcome",
    "Comparison",
    "FIXED_TIMESTAMP",
    "ablation_taus",
    "build_dataset",
    "compare_searchers",
    "evaluate_trials",
    "fidelity_reports",
    "pilot_configs",
    "pilot_fidelity",
]
