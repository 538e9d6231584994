"""Command-line workflow: pilot, fidelity, train, search, validate, compare, report.

Every subcommand reads a JSON run manifest and writes under its output
directory with fixed file names, so reruns with the same manifest and seed
produce byte-identical results (trial-log timestamps aside).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .curves import kendall_tau
from .errors import (
    CorruptLogError,
    DivergenceError,
    DuplicateRecordError,
    InsufficientDataError,
    IntegrityError,
    PoisonedBatchError,
    SchemaDriftError,
    SearchError,
    SingularKernelError,
)
from .experiments import compare_searchers, evaluate_trials, fidelity_reports
from .oracle import DEFAULT_NOISE, GRID_POINTS, SynthBenchmark, make_benchmark
from .predictor import PredictorEnsemble, TrainingConfig, evaluate_rank_quality, train_ensemble
from .sampler import RewardSpec, RLConfig, SearchEntry, run_random_search, run_rl_search
from .space import Config, SearchSpace, binary_space, config_id
from .store import TrialLog, dedupe, split, warm_start_pool

log = logging.getLogger("roisearch")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


class ManifestError(SearchError, ValueError):
    pass


@dataclass
class RunManifest:
    """Everything a run needs besides the seed.

    Relative paths are resolved against the manifest's own directory.
    """

    space: str | None = None
    trial_log: str = "trials.jsonl"
    benchmark: dict | None = None
    fidelity_fraction: float | None = None
    training: TrainingConfig = field(default_factory=TrainingConfig)
    k: int = 10
    rl: RLConfig = field(default_factory=RLConfig)
    alphas: tuple[float, ...] = (0.0,)
    out: str = "out"
    rounds: int = 1
    n_pilots: int = 20
    train_trials: int = 150
    holdout: int = 30
    validate_top_k: int = 10
    compare: dict = field(default_factory=lambda: {"budget": 150, "warmstart": 75})
    base_dir: Path = field(default=Path("."), repr=False)

    def __post_init__(self) -> None:
        if self.fidelity_fraction is not None and not 0.0 < self.fidelity_fraction <= 1.0:
            raise ManifestError(f"fidelity_fraction must be in (0, 1], got {self.fidelity_fraction}")
        if self.rounds < 1:
            raise ManifestError("rounds must be >= 1")
        if self.k < 1:
            raise ManifestError("k must be >= 1")
        if self.space is None and self.benchmark is None:
            raise ManifestError("manifest needs a space file or a benchmark")
        for a in self.alphas:
            if not 0.0 <= a <= 1.0:
                raise ManifestError(f"alpha must be in [0, 1], got {a}")
        if self.space is not None and not self.path(self.space).exists():
            raise ManifestError(f"space file {self.path(self.space)} does not exist")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path = Path(".")) -> RunManifest:
        d = dict(d)
        known = set(cls.__dataclass_fields__) | {"alpha", "reward"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ManifestError(f"unknown manifest keys: {unknown}")
        try:
            if "training" in d:
                d["training"] = TrainingConfig.from_dict(d["training"])
            if "rl" in d:
                d["rl"] = RLConfig.from_dict(d["rl"])
        except (TypeError, ValueError) as exc:
            raise ManifestError(str(exc)) from exc
        reward = d.pop("reward", None)
        if "alpha" in d:
            d["alphas"] = (d.pop("alpha"),)
        elif reward is not None and "alpha" in reward:
            d["alphas"] = (reward["alpha"],)
        if "alphas" in d:
            d["alphas"] = tuple(float(a) for a in d["alphas"])
        return cls(**d, base_dir=Path(base_dir))

    @classmethod
    def load(cls, path: str | Path) -> RunManifest:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ManifestError(f"manifest {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest {path}: {exc}") from None
        return cls.from_dict(data, path.parent)

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def load_space(self) -> SearchSpace:
        if self.space is not None:
            return SearchSpace.load(self.path(self.space))
        n = int(self.benchmark.get("decisions", 18))
        return binary_space(n, name=self.benchmark.get("name", f"dhen{n}"))

    def load_benchmark(self, space: SearchSpace) -> SynthBenchmark:
        if self.benchmark is None:
            raise ManifestError("this command needs a synthetic benchmark in the manifest")
        return make_benchmark(space, int(self.benchmark.get("seed", 7)),
                              float(self.benchmark.get("noise_std", DEFAULT_NOISE)))


# helpers


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _alpha_tag(a: float) -> str:
    return f"{a:g}".replace(".", "p")


class Context:
    def __init__(self, manifest: RunManifest, seed: int, out: str | None):
        self.m = manifest
        self.seed = seed
        self.out = Path(out) if out else manifest.path(manifest.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.space = manifest.load_space()
        self._bench = None

    @property
    def bench(self) -> SynthBenchmark:
        if self._bench is None:
            self._bench = self.m.load_benchmark(self.space)
            if self._bench.space.to_dict() != self.space.to_dict():
                raise ManifestError("benchmark and space disagree")
        return self._bench

    def trial_log(self) -> TrialLog:
        seed = None if self.m.benchmark is None else int(self.m.benchmark.get("seed", 7))
        return TrialLog.open(self.m.path(self.m.trial_log), self.space, seed, GRID_POINTS)

    def fraction(self) -> float:
        if self.m.fidelity_fraction is not None:
            return self.m.fidelity_fraction
        f = self.out / "fidelity.json"
        if not f.exists():
            raise InsufficientDataError("no fidelity fraction: set fidelity_fraction or run `fidelity` first")
        return float(json.loads(f.read_text(encoding="utf-8"))["chosen_fraction"])

    def checkpoint_path(self) -> Path:
        return self.out / f"predictor_k{self.m.k}_{self.m.training.loss}.json"


# subcommands


def cmd_pilot(ctx: Context, n_pilots: int | None = None) -> int:
    n = ctx.m.n_pilots if n_pilots is None else n_pilots
    if n <= 0:
        warnings.warn("n_pilots is 0; nothing to do", stacklevel=2)
        return EXIT_OK
    tl = ctx.trial_log()
    configs = dedupe(run_random_search(ctx.space, n, ctx.seed), tl)
    for rec in evaluate_trials(ctx.bench, configs, 1.0, "pilot"):
        tl.append(rec)
    log.info("pilot: %d new of %d requested; log has %d records", len(configs), n, len(tl))
    return EXIT_OK


def cmd_fidelity(ctx: Context) -> int:
    tl = ctx.trial_log()
    pilots = [r for r in tl if r.source == "pilot" and r.fidelity_fraction == 1.0]
    if len(pilots) < 5:
        raise InsufficientDataError(f"need at least 5 full-fidelity pilots, log has {len(pilots)}")
    reps = fidelity_reports(pilots)
    rows = []
    for metric, rep in reps.items():
        for f, t in zip(rep.candidate_fractions, rep.taus):
            rows.append((metric, f, t, int(f == rep.chosen_fraction and rep.met)))
    _write_csv(ctx.out / "fidelity_report.csv", ("metric", "fraction", "tau", "chosen"), rows)
    chosen = reps["extrapolated"].chosen_fraction
    _write_json(ctx.out / "fidelity.json", {
        "chosen_fraction": chosen,
        "metric": "extrapolated",
        "n_pilots": len(pilots),
        "reports": {m: r.to_dict() for m, r in reps.items()},
    })
    log.info("fidelity: chosen fraction %.2f (raw would pick %.2f)", chosen, reps["raw"].chosen_fraction)
    return EXIT_OK


def _training_pool(ctx: Context, tl: TrialLog):
    frac = ctx.fraction()
    have = [r for r in tl if r.source == "random" and abs(r.fidelity_fraction - frac) < 1e-12]
    missing = ctx.m.train_trials - len(have)
    if missing > 0 and ctx.m.benchmark is not None:
        # top up with random trials at the working fidelity; seeded apart from the pilots
        fresh = dedupe(run_random_search(ctx.space, ctx.m.train_trials + len(tl), ctx.seed + 1), tl)[:missing]
        for rec in evaluate_trials(ctx.bench, fresh, frac, "random"):
            tl.append(rec)
    return warm_start_pool(tl, fraction=frac)


def cmd_train(ctx: Context, k: int | None = None, loss: str | None = None) -> int:
    if k is not None:
        ctx.m.k = k
    if loss is not None:
        ctx.m.training = TrainingConfig.from_dict({**asdict(ctx.m.training), "loss": loss})
    tl = ctx.trial_log()
    pool = _training_pool(ctx, tl)
    if len(pool) < 10:
        raise InsufficientDataError(f"need at least 10 usable records, have {len(pool)}")
    n_val = min(ctx.m.holdout, len(pool) - 5) if len(pool) >= 15 else 0
    train, val = split(pool, len(pool) - n_val, n_val, ctx.seed)
    ens = train_ensemble(train, ctx.m.training, k=ctx.m.k, seed=ctx.seed,
                         space_name=ctx.space.name, space_version=ctx.space.version)
    digest = ens.save(ctx.checkpoint_path())
    q = evaluate_rank_quality(ens, val) if len(val) >= 5 else None
    _write_csv(
        ctx.out / f"rank_quality_k{ctx.m.k}_{ctx.m.training.loss}.csv",
        ("k", "loss", "n_train", "n_val", "tau_ne", "tau_flops", "checkpoint_sha256"),
        [(ctx.m.k, ctx.m.training.loss, len(train), len(val),
          q.tau_ne if q else math.nan, q.tau_flops if q else math.nan, digest)],
    )
    log.info("train: k=%d loss=%s tau_ne=%s", ctx.m.k, ctx.m.training.loss, q.tau_ne if q else "n/a")
    return EXIT_OK


def _load_checkpoint(ctx: Context) -> PredictorEnsemble:
    path = ctx.checkpoint_path()
    if not path.exists():
        raise InsufficientDataError(f"no checkpoint at {path}; run `train` first")
    ens = PredictorEnsemble.load(path)
    if (ens.space_name, ens.space_version) != (ctx.space.name, ctx.space.version):
        raise SchemaDriftError(
            f"checkpoint is for {ens.space_name!r} v{ens.space_version}, "
            f"space is {ctx.space.name!r} v{ctx.space.version}"
        )
    return ens


def _entry_json(space: SearchSpace, e: SearchEntry, alpha: float) -> dict:
    return {
        "alpha": alpha,
        "config_id": config_id(space, e.config),
        "config": e.config.to_dict(),
        "predicted_ne": e.predicted_ne,
        "predicted_flops": e.predicted_flops,
        "reward": e.reward,
        "seed": e.seed,
        "step": e.step,
    }


def cmd_search(ctx: Context) -> int:
    ens = _load_checkpoint(ctx)
    pool = _training_pool(ctx, ctx.trial_log())
    if not pool:
        raise InsufficientDataError("trial log has no usable records for reward normalisation")
    enc = np.stack([r.encoding for r in pool])
    cfg = RLConfig.from_dict({**asdict(ctx.m.rl), "seeds": [ctx.seed + s for s in ctx.m.rl.seeds]})
    for alpha in ctx.m.alphas:
        spec = RewardSpec.from_predictions(ens, enc, alpha)
        res = run_rl_search(ens, ctx.space, spec, cfg)
        tag = _alpha_tag(alpha)
        with open(ctx.out / f"search_alpha{tag}.jsonl", "w", encoding="utf-8") as fh:
            for e in res.entries:
                fh.write(json.dumps(_entry_json(ctx.space, e, alpha), sort_keys=True) + "\n")
        _write_csv(ctx.out / f"trace_alpha{tag}.csv", ("step", "seed", "batch_mean_reward", "running_best"),
                   ((t.step, t.seed, t.batch_mean_reward, t.running_best) for t in res.trace))
        log.info("search: alpha=%g best reward %.4f", alpha, res.best.reward)
    return EXIT_OK


def _load_candidates(ctx: Context, path: str | None) -> list[dict]:
    files = [Path(path)] if path else [ctx.out / f"search_alpha{_alpha_tag(a)}.jsonl" for a in ctx.m.alphas]
    out = []
    for f in files:
        if not f.exists():
            raise InsufficientDataError(f"no candidates at {f}; run `search` first")
        out += [json.loads(line) for line in f.read_text(encoding="utf-8").splitlines() if line.strip()]
    return out


def cmd_validate(ctx: Context, candidates: str | None = None) -> int:
    cands = _load_candidates(ctx, candidates)
    if not cands:
        raise InsufficientDataError("candidate list is empty")
    top = ctx.m.validate_top_k
    by_alpha: dict[float, list[dict]] = {}
    for c in cands:
        by_alpha.setdefault(c["alpha"], []).append(c)
    chosen = [c for group in by_alpha.values() for c in group[:top]]
    tl = ctx.trial_log()
    new = dedupe([Config(c["config"]) for c in chosen], tl)
    fresh = {config_id(ctx.space, c) for c in new}
    for rec in evaluate_trials(ctx.bench, new, 1.0, "rl"):
        tl.append(rec)
    full = {r.config_id: r for r in tl if r.fidelity_fraction == 1.0}
    rows = []
    for c in chosen:
        rec = full.get(c["config_id"])
        if rec is None:
            continue
        rows.append((c["alpha"], c["config_id"], c["predicted_ne"], rec.long_term_ne, c["predicted_flops"],
                     rec.flops, int(c["config_id"] in fresh)))
    rows.sort(key=lambda r: (r[3], r[0], r[1]))
    _write_csv(ctx.out / "validation.csv",
               ("alpha", "config_id", "predicted_ne", "realized_ne", "predicted_flops", "flops", "newly_evaluated"),
               rows)
    tau = kendall_tau([r[2] for r in rows], [r[3] for r in rows]) if len(rows) >= 2 else math.nan
    _write_json(ctx.out / "validation_summary.json", {
        "n_candidates": len(rows),
        "n_new": len(new),
        "tau_predicted_vs_realized": None if math.isnan(tau) else tau,
        "best_realized_ne": min((r[3] for r in rows), default=None),
    })
    log.info("validate: %d candidates, %d newly evaluated, tau=%s", len(rows), len(new), tau)
    return EXIT_OK


def cmd_compare(ctx: Context) -> int:
    bench = ctx.bench
    budget = int(ctx.m.compare.get("budget", 150))
    warm = int(ctx.m.compare.get("warmstart", 75))
    if budget < warm:
        raise ManifestError(f"compare budget {budget} is smaller than the warm start {warm}")
    comp = compare_searchers(bench, ctx.fraction(), budget, warm, ctx.seed, ctx.m.rl, ctx.m.training, ctx.m.k,
                             ctx.m.alphas[0], ctx.m.rounds)
    names = ("random", "bo", "rl")
    _write_csv(ctx.out / "comparison.csv", ("searcher", "trials", "best_true_ne"),
               ((n, len(comp.arms[n].true_ne), comp.arms[n].best) for n in names))
    curves = [comp.arms[n].incumbent for n in names]
    _write_csv(ctx.out / "incumbents.csv", ("trial",) + names,
               ((i + 1, *(float(c[i]) for c in curves)) for i in range(budget)))
    _write_json(ctx.out / "comparison.json", {
        "budget": budget,
        "warmstart": warm,
        "fraction": ctx.fraction(),
        "warm_pool_ids": comp.warm_ids,
        "best_true_ne": {n: comp.arms[n].best for n in names},
        "ordered_rl_bo_random": comp.ordered(),
    })
    log.info("compare: %s", {n: round(comp.arms[n].best, 6) for n in names})
    return EXIT_OK


def pareto_front(points: Sequence[tuple[str, float, float]]) -> list[tuple[str, float, float]]:
    """Points ``(id, ne, flops)`` not dominated in both objectives (lower is better)."""
    pts = sorted(points, key=lambda p: (p[2], p[1], p[0]))
    front, best_ne = [], math.inf
    for p in pts:
        if p[1] < best_ne:
            front.append(p)
            best_ne = p[1]
    return front


def cmd_report(ctx: Context) -> int:
    rows = []
    for a in ctx.m.alphas:
        f = ctx.out / f"search_alpha{_alpha_tag(a)}.jsonl"
        if f.exists():
            for line in f.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    e = json.loads(line)
                    rows.append((e["alpha"], e["config_id"], e["predicted_ne"], e["predicted_flops"]))
    _write_csv(ctx.out / "scatter.csv", ("alpha", "config_id", "predicted_ne", "predicted_flops"), rows)
    log_path = ctx.m.path(ctx.m.trial_log)
    realized = []
    if log_path.exists():
        realized = [(r.config_id, r.long_term_ne, r.flops) for r in TrialLog.load(log_path)
                    if r.fidelity_fraction == 1.0 and r.long_term_ne is not None]
    _write_csv(ctx.out / "pareto_front.csv", ("config_id", "realized_ne", "flops"), pareto_front(realized))
    return EXIT_OK


# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roisearch", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", required=True, help="run manifest (JSON)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output directory (overrides the manifest)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("pilot", parents=[common], help="evaluate random pilot configs at full fidelity")
    sp.add_argument("--n", type=int, default=None, help="number of pilots (default: manifest n_pilots)")
    sub.add_parser("fidelity", parents=[common], help="choose the truncation fraction from pilots")
    sp = sub.add_parser("train", parents=[common], help="train the predictor ensemble")
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--loss", choices=("pairwise_rank", "mse"), default=None)
    sub.add_parser("search", parents=[common], help="run the RL searcher for each alpha")
    sp = sub.add_parser("validate", parents=[common], help="evaluate top candidates at full fidelity")
    sp.add_argument("--candidates", default=None, help="candidate JSONL (default: this run's search output)")
    sub.add_parser("compare", parents=[common], help="random vs BO vs RL under a shared warm start")
    sub.add_parser("report", parents=[common], help="emit NE/FLOPs scatter and Pareto-front CSVs")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        ctx = Context(RunManifest.load(args.manifest), args.seed, args.out)
        if args.command == "pilot":
            return cmd_pilot(ctx, args.n)
        if args.command == "fidelity":
            return cmd_fidelity(ctx)
        if args.command == "train":
            return cmd_train(ctx, args.k, args.loss)
        if args.command == "search":
            return cmd_search(ctx)
        if args.command == "validate":
            return cmd_validate(ctx, args.candidates)
        if args.command == "compare":
            return cmd_compare(ctx)
        return cmd_report(ctx)
    except (DivergenceError, PoisonedBatchError, SingularKernelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (InsufficientDataError, CorruptLogError, DuplicateRecordError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ManifestError, SchemaDriftError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
