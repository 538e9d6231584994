"""Append-only JSONL trial log, warm-start pools and train/validation splits.

Line 1 of a log is a header carrying the full search space, its version, the
extrapolation horizon and (for synthetic runs) the benchmark seed. Every other
line is one :class:`TrialRecord`.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .curves import LearningCurve, default_window, extrapolate_long_term
from .errors import (
    CorruptLogError,
    DuplicateRecordError,
    InsufficientDataError,
    IntegrityError,
    SchemaDriftError,
    SearchError,
)
from .predictor import TrainRecord
from .space import Config, SearchSpace, config_id_for, encode_config

SOURCES = ("pilot", "rl", "random", "bo", "manual")
DEFAULT_HORIZON = 25
LONG_TERM_TOL = 1e-9


def long_term_label(curve: Sequence[Sequence[float]], horizon: int, window: int | None = None) -> float | None:
    """Extrapolated long-term NE for a stored curve; ``None`` if it is too short to fit."""
    if len(curve) < 2:
        return None
    lc = LearningCurve(tuple((int(s), float(v)) for s, v in curve))
    w = default_window(len(lc)) if window is None else min(window, len(lc))
    return extrapolate_long_term(lc, w, max(0.0, horizon - lc.last_step))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class TrialRecord:
    config_id: str
    config: Config
    encoding: tuple[float, ...]
    curve: tuple[tuple[int, float], ...]
    short_term_ne: float
    long_term_ne: float | None
    flops: float
    fidelity_fraction: float
    timestamp: str
    source: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "config", Config(self.config))
        object.__setattr__(self, "encoding", tuple(float(x) for x in self.encoding))
        object.__setattr__(self, "curve", tuple((int(s), float(v)) for s, v in self.curve))
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}; expected one of {SOURCES}")
        if not 0.0 < self.fidelity_fraction <= 1.0:
            raise ValueError(f"fidelity_fraction must be in (0, 1], got {self.fidelity_fraction}")

    @property
    def key(self) -> tuple[str, float]:
        return self.config_id, round(float(self.fidelity_fraction), 12)

    def to_json(self) -> dict:
        return {
            "config_id": self.config_id,
            "config": self.config.to_dict(),
            "encoding": list(self.encoding),
            "curve": [[s, v] for s, v in self.curve],
            "short_term_ne": self.short_term_ne,
            "long_term_ne": self.long_term_ne,
            "flops": self.flops,
            "fidelity_fraction": self.fidelity_fraction,
            "timestamp": self.timestamp,
            "source": self.source,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> TrialRecord:
        return cls(
            config_id=d["config_id"],
            config=Config(d["config"]),
            encoding=d["encoding"],
            curve=d["curve"],
            short_term_ne=float(d["short_term_ne"]),
            long_term_ne=None if d["long_term_ne"] is None else float(d["long_term_ne"]),
            flops=float(d["flops"]),
            fidelity_fraction=float(d["fidelity_fraction"]),
            timestamp=d["timestamp"],
            source=d["source"],
        )


def make_record(space: SearchSpace, config: Mapping, curve: Sequence[Sequence[float]], flops: float,
                fidelity_fraction: float, source: str, horizon: int = DEFAULT_HORIZON,
                timestamp: str | None = None) -> TrialRecord:
    """Build a record, deriving id, encoding and both NE summaries."""
    cfg = Config(config)
    pts = tuple((int(s), float(v)) for s, v in curve)
    if not pts:
        raise InsufficientDataError("a trial needs at least one curve point")
    return TrialRecord(
        config_id=config_id_for(space.name, space.version, cfg),
        config=cfg,
        encoding=tuple(encode_config(space, cfg).tolist()),
        curve=pts,
        short_term_ne=pts[-1][1],
        long_term_ne=long_term_label(pts, horizon),
        flops=float(flops),
        fidelity_fraction=float(fidelity_fraction),
        timestamp=timestamp or _now(),
        source=source,
    )


class TrialLog:
    """Single-writer append-only trial log backed by a JSONL file."""

    def __init__(self, path: str | Path, space: SearchSpace, benchmark_seed: int | None = None,
                 horizon: int = DEFAULT_HORIZON):
        self.path = Path(path)
        self.space = space
        self.benchmark_seed = benchmark_seed
        self.horizon = int(horizon)
        self._records: list[TrialRecord] = []
        self._keys: set[tuple[str, float]] = set()
        self._ids: set[str] = set()
        self.torn_tail = False
        self._valid_bytes: int | None = None

    # construction

    @property
    def header(self) -> dict:
        h = {"space": self.space.to_dict(), "version": self.space.version, "horizon": self.horizon}
        if self.benchmark_seed is not None:
            h["benchmark_seed"] = self.benchmark_seed
        return h

    @classmethod
    def create(cls, path: str | Path, space: SearchSpace, benchmark_seed: int | None = None,
               horizon: int = DEFAULT_HORIZON) -> TrialLog:
        log = cls(path, space, benchmark_seed, horizon)
        log.path.parent.mkdir(parents=True, exist_ok=True)
        with open(log.path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(log.header, sort_keys=True) + "\n")
        return log

    @classmethod
    def open(cls, path: str | Path, space: SearchSpace, benchmark_seed: int | None = None,
             horizon: int = DEFAULT_HORIZON) -> TrialLog:
        """Load ``path`` if it exists (checking it matches ``space``), else create it."""
        if not Path(path).exists():
            return cls.create(path, space, benchmark_seed, horizon)
        log = cls.load(path)
        if log.space.to_dict() != space.to_dict():
            raise SchemaDriftError(
                f"log {path} holds space {log.space.name!r} v{log.space.version}, "
                f"expected {space.name!r} v{space.version}"
            )
        return log

    @classmethod
    def load(cls, path: str | Path) -> TrialLog:
        path = Path(path)
        raw = path.read_bytes()
        lines = raw.split(b"\n")
        if not lines or not lines[0].strip():
            raise CorruptLogError(f"{path} has no header line")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise CorruptLogError(f"{path}: unreadable header: {exc}") from None
        space = SearchSpace.from_dict(header["space"])
        if int(header.get("version", space.version)) != space.version:
            raise CorruptLogError(f"{path}: header version disagrees with its space")
        log = cls(path, space, header.get("benchmark_seed"), header.get("horizon", DEFAULT_HORIZON))
        offset = len(lines[0]) + 1
        body = lines[1:]
        for i, line in enumerate(body):
            last = i == len(body) - 1
            if not line.strip():
                offset += len(line) + (0 if last else 1)
                continue
            try:
                rec = TrialRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                # only an unterminated final line can be a torn write
                if last and not raw.endswith(b"\n"):
                    log.torn_tail = True
                    warnings.warn(f"{path}: ignoring torn trailing line ({len(line)} bytes)", stacklevel=2)
                    break
                raise CorruptLogError(f"{path}:{i + 2}: {exc}") from None
            log._admit(rec)
            offset += len(line) + 1
        log._valid_bytes = min(offset, len(raw))
        return log

    # access

    @property
    def records(self) -> list[TrialRecord]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[TrialRecord]:
        return iter(self._records)

    def contains_id(self, cid: str) -> bool:
        return cid in self._ids

    def config_id(self, config: Mapping) -> str:
        return config_id_for(self.space.name, self.space.version, config)

    def make_record(self, config: Mapping, curve, flops: float, fidelity_fraction: float, source: str,
                    timestamp: str | None = None) -> TrialRecord:
        return make_record(self.space, config, curve, flops, fidelity_fraction, source, self.horizon, timestamp)

    # writing

    def _check(self, rec: TrialRecord) -> None:
        expected = self.config_id(rec.config)
        if rec.config_id != expected:
            raise SchemaDriftError(
                f"record {rec.config_id} was not made for space {self.space.name!r} v{self.space.version}"
            )
        try:
            self.space.validate(rec.config)
        except SearchError as exc:
            raise SchemaDriftError(str(exc)) from exc
        if len(rec.encoding) != self.space.width:
            raise SchemaDriftError(f"encoding width {len(rec.encoding)} != space width {self.space.width}")
        recomputed = long_term_label(rec.curve, self.horizon)
        stored = rec.long_term_ne
        if (recomputed is None) != (stored is None) or (
            stored is not None and not abs(recomputed - stored) <= LONG_TERM_TOL
        ):
            raise IntegrityError(f"record {rec.config_id}: long_term_ne {stored} != recomputed {recomputed}")
        if rec.key in self._keys:
            raise DuplicateRecordError(f"config {rec.config_id} already logged at fidelity {rec.fidelity_fraction}")

    def _admit(self, rec: TrialRecord) -> None:
        self._check(rec)
        self._records.append(rec)
        self._keys.add(rec.key)
        self._ids.add(rec.config_id)

    def append(self, record: TrialRecord) -> TrialLog:
        self._check(record)
        line = json.dumps(record.to_json(), sort_keys=True, separators=(",", ":")) + "\n"
        if self.torn_tail and self._valid_bytes is not None:
            with open(self.path, "r+b") as fh:
                fh.truncate(self._valid_bytes)
            self.torn_tail = False
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
        self._valid_bytes = None
        self._admit(record)
        return self

    def extend(self, records: Iterable[TrialRecord]) -> TrialLog:
        for r in records:
            self.append(r)
        return self


def append(log: TrialLog, record: TrialRecord) -> TrialLog:
    return log.append(record)


def _records(log_or_records) -> list[TrialRecord]:
    return log_or_records.records if isinstance(log_or_records, TrialLog) else list(log_or_records)


def split(log, train_n: int, val_n: int, seed: int) -> tuple[list[TrialRecord], list[TrialRecord]]:
    """Seeded shuffle, then the first ``train_n`` for training and the next ``val_n`` for validation."""
    recs = _records(log)
    if train_n < 0 or val_n < 0:
        raise ValueError("split sizes must be non-negative")
    if train_n + val_n > len(recs):
        raise InsufficientDataError(f"asked for {train_n}+{val_n} records, log has {len(recs)}")
    order = np.random.default_rng(seed).permutation(len(recs))
    train = [recs[i] for i in order[:train_n]]
    val = [recs[i] for i in order[train_n : train_n + val_n]]
    return train, val


class WarmStartPool(list):
    """TrainRecords plus the number of trials skipped as unusable."""

    skipped: int = 0


def to_train_record(rec: TrialRecord, label: float | None = None) -> TrainRecord:
    ne = rec.long_term_ne if label is None else label
    return TrainRecord(np.asarray(rec.encoding), float(ne), math.log10(rec.flops), rec.config_id)


def _label_at(rec: TrialRecord, fraction: float, horizon: int) -> float | None:
    """Label ``rec`` as if it had been trained on ``fraction`` of the data."""
    if rec.fidelity_fraction < fraction - 1e-12:
        return None
    limit = fraction * horizon * (1 + 1e-9)
    return long_term_label([p for p in rec.curve if p[0] <= limit], horizon)


def warm_start_pool(log, sources: Iterable[str] | None = None, fraction: float | None = None) -> WarmStartPool:
    """Convert matching trials to predictor training records.

    With ``fraction`` set, trials run at a higher fidelity are relabelled from
    the prefix of their curve up to ``fraction`` of the horizon, so every label
    comes from the same amount of training; lower-fidelity trials are skipped.
    Trials whose curve is too short to extrapolate are skipped and counted.
    """
    wanted = None if sources is None else set(sources)
    horizon = log.horizon if isinstance(log, TrialLog) else DEFAULT_HORIZON
    pool = WarmStartPool()
    for rec in _records(log):
        if wanted is not None and rec.source not in wanted:
            continue
        label = rec.long_term_ne if fraction is None else _label_at(rec, fraction, horizon)
        if label is None:
            pool.skipped += 1
            continue
        pool.append(to_train_record(rec, label))
    if pool.skipped:
        warnings.warn(f"skipped {pool.skipped} trial(s) with curves too short to extrapolate", stacklevel=2)
    return pool


def dedupe(configs: Iterable[Mapping], log: TrialLog) -> list[Config]:
    """Drop configs already in ``log`` (at any fidelity) and repeats; order is kept."""
    out, seen = [], set()
    for c in configs:
        cid = log.config_id(c)
        if cid in seen or log.contains_id(cid):
            continue
        seen.add(cid)
        out.append(Config(c))
    return out
