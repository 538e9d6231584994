"""Search spaces, configurations and their numeric encodings.

A :class:`SearchSpace` is an ordered tuple of :class:`Decision` objects. The
declaration order fixes the encoding layout: categorical decisions become
one-hot blocks, float decisions become a single slot normalised to [0, 1].
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np

from .errors import (
    InvalidAssignmentError,
    MalformedEncodingError,
    NotEnumerableError,
    SchemaMismatchError,
)

ENUMERATION_CAP = 10**6
FLOAT_GRID_LEVELS = 8


@dataclass(frozen=True)
class Decision:
    """One searchable knob.

    Attributes:
        name: Unique name within the space.
        kind: ``"categorical"`` or ``"float"``.
        values: Ordered distinct choice labels (categorical only).
        bounds: ``(min, max)`` (float only).
    """

    name: str
    kind: Literal["categorical", "float"] = "categorical"
    values: tuple = ()
    bounds: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind == "categorical":
            vals = tuple(self.values)
            object.__setattr__(self, "values", vals)
            if len(vals) < 2:
                raise ValueError(f"decision {self.name!r} needs at least 2 values")
            if len(set(vals)) != len(vals):
                raise ValueError(f"decision {self.name!r} has repeated values")
        elif self.kind == "float":
            if self.bounds is None:
                raise ValueError(f"float decision {self.name!r} needs bounds")
            lo, hi = (float(b) for b in self.bounds)
            if not lo < hi:
                raise ValueError(f"float decision {self.name!r} needs min < max")
            object.__setattr__(self, "bounds", (lo, hi))
        else:
            raise ValueError(f"unknown decision kind {self.kind!r}")

    @property
    def width(self) -> int:
        return len(self.values) if self.kind == "categorical" else 1

    def grid(self, levels: int = FLOAT_GRID_LEVELS) -> tuple:
        """Choices available to a discrete sampler (floats are discretised)."""
        if self.kind == "categorical":
            return self.values
        lo, hi = self.bounds
        return tuple(float(x) for x in np.linspace(lo, hi, levels))

    def validate(self, value) -> None:
        if self.kind == "categorical":
            if value not in self.values:
                raise InvalidAssignmentError(self.name, value, f"expected one of {list(self.values)}")
        else:
            lo, hi = self.bounds
            if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
                raise InvalidAssignmentError(self.name, value, "expected a number")
            if not lo <= float(value) <= hi:
                raise InvalidAssignmentError(self.name, value, f"outside [{lo}, {hi}]")

    def to_dict(self) -> dict:
        if self.kind == "categorical":
            return {"name": self.name, "kind": self.kind, "values": list(self.values)}
        return {"name": self.name, "kind": self.kind, "bounds": list(self.bounds)}

    @classmethod
    def from_dict(cls, d: Mapping) -> Decision:
        kind = d.get("kind", "categorical")
        if kind == "categorical":
            return cls(d["name"], kind, tuple(d["values"]))
        return cls(d["name"], kind, bounds=tuple(d["bounds"]))


class Config(Mapping):
    """Immutable, hashable assignment of a value to every decision.

    Equality and hashing ignore key order.
    """

    __slots__ = ("_data", "_key")

    def __init__(self, assignments: Mapping[str, Any] | None = None, **kwargs):
        data = dict(assignments or {}, **kwargs)
        self._data = data
        self._key = tuple(sorted(data.items(), key=lambda kv: kv[0]))

    def __getitem__(self, name: str):
        return self._data[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __hash__(self) -> int:
        return hash(self._key)

    def __eq__(self, other) -> bool:
        if isinstance(other, Config):
            return self._key == other._key
        if isinstance(other, Mapping):
            return self._data == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v!r}" for k, v in self._key)
        return f"Config({inner})"

    def to_dict(self) -> dict:
        return dict(self._key)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class SearchSpace:
    decisions: tuple[Decision, ...]
    name: str = "space"
    version: int = 1
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        decs = tuple(self.decisions)
        object.__setattr__(self, "decisions", decs)
        names = [d.name for d in decs]
        if len(set(names)) != len(names):
            raise ValueError("decision names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.decisions]

    @property
    def width(self) -> int:
        return sum(d.width for d in self.decisions)

    @property
    def is_categorical(self) -> bool:
        return all(d.kind == "categorical" for d in self.decisions)

    def decision(self, name: str) -> Decision:
        return self.decisions[self._index[name]]

    def size(self) -> int:
        if not self.is_categorical:
            return math.inf
        return math.prod(len(d.values) for d in self.decisions)

    def offsets(self) -> list[int]:
        out, pos = [], 0
        for d in self.decisions:
            out.append(pos)
            pos += d.width
        return out

    def validate(self, config: Mapping) -> None:
        keys = set(config)
        names = set(self._index)
        if keys != names:
            raise SchemaMismatchError(
                missing=[n for n in self.names if n not in keys],
                extra=sorted(k for k in keys if k not in names),
            )
        for d in self.decisions:
            d.validate(config[d.name])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "decisions": [d.to_dict() for d in self.decisions],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SearchSpace:
        return cls(
            tuple(Decision.from_dict(x) for x in d["decisions"]),
            name=d.get("name", "space"),
            version=int(d.get("version", 1)),
        )

    @classmethod
    def load(cls, path: str | Path) -> SearchSpace:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def binary_space(n: int, name: str = "binary", version: int = 1) -> SearchSpace:
    """``n`` two-valued decisions ``d00 .. d{n-1}`` with values ``(0, 1)``."""
    return SearchSpace(
        tuple(Decision(f"d{i:02d}", "categorical", (0, 1)) for i in range(n)),
        name=name,
        version=version,
    )


def encode_onehot(decision: Decision, choice) -> np.ndarray:
    if decision.kind != "categorical":
        raise InvalidAssignmentError(decision.name, choice, "decision is not categorical")
    try:
        i = decision.values.index(choice)
    except ValueError:
        raise InvalidAssignmentError(decision.name, choice, f"expected one of {list(decision.values)}") from None
    out = np.zeros(len(decision.values))
    out[i] = 1.0
    return out


def encode_float(decision: Decision, x: float) -> float:
    if decision.kind != "float":
        raise InvalidAssignmentError(decision.name, x, "decision is not float")
    decision.validate(x)
    lo, hi = decision.bounds
    return (float(x) - lo) / (hi - lo)


def encode_config(space: SearchSpace, config: Mapping) -> np.ndarray:
    space.validate(config)
    blocks = []
    for d in space.decisions:
        if d.kind == "categorical":
            blocks.append(encode_onehot(d, config[d.name]))
        else:
            blocks.append(np.array([encode_float(d, config[d.name])]))
    return np.concatenate(blocks)


def decode_config(space: SearchSpace, v) -> Config:
    v = np.asarray(v, dtype=float)
    if v.shape != (space.width,):
        raise MalformedEncodingError(f"expected width {space.width}, got shape {v.shape}")
    out = {}
    for d, off in zip(space.decisions, space.offsets()):
        block = v[off : off + d.width]
        if d.kind == "categorical":
            if not np.all((block == 0.0) | (block == 1.0)) or block.sum() != 1.0:
                raise MalformedEncodingError(f"block for {d.name!r} is not one-hot: {block.tolist()}")
            out[d.name] = d.values[int(np.argmax(block))]
        else:
            x = float(block[0])
            if not 0.0 <= x <= 1.0:
                raise MalformedEncodingError(f"slot for {d.name!r} outside [0, 1]: {x}")
            lo, hi = d.bounds
            out[d.name] = lo + x * (hi - lo)
    return Config(out)


def random_config(space: SearchSpace, seed: int | np.random.Generator) -> Config:
    """Draw each decision independently and uniformly."""
    if not space.decisions:
        raise ValueError("space has no decisions")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = {}
    for d in space.decisions:
        if d.kind == "categorical":
            out[d.name] = d.values[int(rng.integers(len(d.values)))]
        else:
            lo, hi = d.bounds
            out[d.name] = float(rng.uniform(lo, hi))
    return Config(out)


def enumerate_configs(space: SearchSpace, cap: int = ENUMERATION_CAP) -> Iterator[Config]:
    if not space.is_categorical:
        raise NotEnumerableError("space has float decisions")
    if space.size() > cap:
        raise NotEnumerableError(f"space has {space.size()} configs, cap is {cap}")
    names = space.names
    for combo in itertools.product(*(d.values for d in space.decisions)):
        yield Config(dict(zip(names, combo)))


class IndexCodec:
    """Fast conversion between per-decision choice indices and encodings.

    Samplers work on integer index arrays of shape ``(n, n_decisions)``; float
    decisions are discretised to ``levels`` grid points.
    """

    def __init__(self, space: SearchSpace, levels: int = FLOAT_GRID_LEVELS):
        self.space = space
        self.choices = [d.grid(levels) for d in space.decisions]
        self.sizes = np.array([len(c) for c in self.choices], dtype=np.int64)
        self._tables = []
        for d, ch in zip(space.decisions, self.choices):
            if d.kind == "categorical":
                self._tables.append(np.eye(len(ch)))
            else:
                self._tables.append(np.array([[encode_float(d, x)] for x in ch]))

    def encode(self, idx: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(idx)
        return np.concatenate([t[idx[:, j]] for j, t in enumerate(self._tables)], axis=1)

    def to_config(self, row) -> Config:
        return Config({d.name: ch[int(i)] for d, ch, i in zip(self.space.decisions, self.choices, row)})

    def to_index(self, config: Mapping) -> np.ndarray:
        out = []
        for d, ch in zip(self.space.decisions, self.choices):
            v = config[d.name]
            if d.kind == "categorical":
                out.append(ch.index(v))
            else:
                out.append(int(np.argmin(np.abs(np.asarray(ch) - float(v)))))
        return np.array(out, dtype=np.int64)

    def all_indices(self, cap: int = ENUMERATION_CAP) -> np.ndarray:
        total = int(np.prod(self.sizes))
        if total > cap:
            raise NotEnumerableError(f"{total} configs exceeds cap {cap}")
        grids = np.indices(tuple(self.sizes)).reshape(len(self.sizes), -1).T
        return grids.astype(np.int64)


def config_id(space: SearchSpace, config: Mapping) -> str:
    """Stable identifier for ``config`` under ``space``'s name and version."""
    return config_id_for(space.name, space.version, config)


def config_id_for(space_name: str, space_version: int, config: Mapping) -> str:
    payload = f"{space_name}:{int(space_version)}:{Config(config).canonical_json()}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
