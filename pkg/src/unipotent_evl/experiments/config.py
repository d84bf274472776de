"""Experiment configuration: a YAML key/value tree that round-trips
losslessly through :class:`ExperimentConfig`."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..lattice import DEFAULT_NODE_CAP, MAX_DIM, NormPair, SplitDims
from ..sampling import SamplerSpec
from ..sections import window_from_dict

KINDS = ("diag", "hits", "joint-counts", "impact", "evl", "oracle", "tails", "fkm", "loglaw")
GRID_KEYS = ("L", "T", "X", "Y", "R")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    dims: SplitDims
    norms: NormPair = field(default_factory=NormPair)
    sampler: dict = field(default_factory=lambda: {"kind": "haar-mixing-push"})
    grids: dict = field(default_factory=dict)
    Nsamples: int = 1000
    seed: int = 0
    out: str = "results"
    cap: int = DEFAULT_NODE_CAP
    budget_doublings: int = 10
    window: dict = field(default_factory=lambda: {"shape": "projected-ball"})
    oracle: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    threads: int = 1

    def __post_init__(self):
        self.validate()

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if self.dims.n > MAX_DIM:
            raise ConfigError(f"n > {MAX_DIM} is not supported")
        for key in self.grids:
            if key not in GRID_KEYS:
                raise ConfigError(f"unknown grid {key!r}")
        if self.Nsamples < 1:
            raise ConfigError("Nsamples must be positive")
        if self.cap < 1:
            raise ConfigError("cap must be positive")
        self.sampler_spec()  # raises on a bad sampler
        if self.kind in ("hits", "joint-counts", "impact", "oracle") or self.window.get("shape") == "box":
            window_from_dict(self.dims, self.window)
        need = {"hits": "L", "joint-counts": "L", "impact": "L", "evl": "T", "loglaw": "T",
                "oracle": "X", "fkm": "R"}
        g = need.get(self.kind)
        if g and not self.grids.get(g):
            raise ConfigError(f"kind {self.kind!r} needs a non-empty {g!r} grid")
        if self.kind == "hits" and any(v < 1 for v in self.grids["L"]):
            raise ConfigError("L values must be >= 1")
        if self.kind in ("evl",) and any(v < 1 for v in self.grids["T"]):
            raise ConfigError("evl needs T >= 1")
        if self.kind == "loglaw" and any(v < 2 for v in self.grids["T"]):
            raise ConfigError("loglaw needs T >= 2")
        if self.kind == "diag" and self.params.get("rogers") and self.dims.n < 3:
            raise ConfigError("the second-moment diagnostic needs n >= 3")
        if self.kind == "impact" and "X" not in self.grids:
            raise ConfigError("impact needs an X grid")

    # -- conversions ----------------------------------------------------------

    def sampler_spec(self, override: dict | None = None) -> SamplerSpec:
        d = dict(self.sampler)
        if override:
            d.update(override)
        d.setdefault("seed", self.seed)
        d["dims"] = self.dims
        return SamplerSpec.from_dict(d)

    def oracle_spec(self) -> SamplerSpec:
        d = dict(self.oracle.get("sampler", {}))
        if not d:
            d = {"kind": "haar-exact-n2" if self.dims.n == 2 else "haar-mixing-push"}
        d.setdefault("seed", self.seed + 1)
        d["dims"] = self.dims
        return SamplerSpec.from_dict(d)

    def window_obj(self):
        w = dict(self.window)
        if w.get("shape", "projected-ball") == "projected-ball":
            w.setdefault("outer", self.norms.outer)
        return window_from_dict(self.dims, w)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dims": self.dims.to_dict(),
            "norms": self.norms.to_dict(),
            "sampler": copy.deepcopy(self.sampler),
            "grids": {k: list(v) for k, v in self.grids.items()},
            "Nsamples": self.Nsamples,
            "seed": self.seed,
            "out": self.out,
            "cap": self.cap,
            "budget_doublings": self.budget_doublings,
            "window": copy.deepcopy(self.window),
            "oracle": copy.deepcopy(self.oracle),
            "params": copy.deepcopy(self.params),
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        try:
            dd = d.pop("dims")
            if "n" in dd:
                dims = SplitDims(int(dd["n"]), int(dd["k"]), int(dd["m"]))
            else:
                dims = SplitDims.from_km(int(dd["k"]), int(dd["m"]))
            nd = d.pop("norms", {}) or {}
            norms = NormPair(nd.get("outer", "euclidean"), nd.get("inner", "euclidean"), nd.get("conjugator"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        d["grids"] = {k: [float(x) for x in v] for k, v in (d.get("grids") or {}).items()}
        try:
            return cls(dims=dims, norms=norms, **d)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dump())

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        data = yaml.safe_load(text)
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())
