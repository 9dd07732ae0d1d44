"""Run configuration, observation files and result serialisation."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterator, Optional, TextIO

import jsonschema

from . import models
from .detectors import DetectorConfig, FullMean, GFunction, Sliding
from .models import ModelPair


class ConfigError(ValueError):
    pass


class ObservationParseError(ValueError):
    pass


class ObservationSupportError(ValueError):
    pass


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("cusum_oal").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _registry():
    from referencing import Registry, Resource

    names = ["estimate", "plan"]
    return Registry().with_resources(
        (f"cusum_oal/{n}.schema.json", Resource.from_contents(load_schema(n))) for n in names
    )


def validate(doc: dict, name: str) -> None:
    """Validate ``doc`` against a shipped schema; raises jsonschema.ValidationError."""
    schema = load_schema(name)
    validator_cls = jsonschema.validators.validator_for(schema)
    validator_cls(schema, registry=_registry()).validate(doc)


@dataclass
class RunConfig:
    pair: ModelPair
    detector: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.experiment.get("seed", 0))

    @property
    def mu0(self) -> float:
        mode = self.detector.get("mu0", "analytic")
        if mode == "analytic":
            return models.mean_llr(self.pair, self.pair.pre_param)
        return float(mode)

    @property
    def true_param(self) -> float:
        return float(self.experiment.get("true_param", self.pair.pre_param))

    @property
    def a(self) -> float:
        return float(self.detector.get("a", 1.0))

    def g(self) -> GFunction:
        return GFunction(float(self.detector.get("u", 0.0)), self.mu0)

    def detector_config(self, c: Optional[float] = None) -> DetectorConfig:
        if c is None:
            if "c" not in self.detector:
                raise ConfigError("detector.c is required for this command")
            c = float(self.detector["c"])
        window = Sliding(self.a) if self.detector.get("window", "full") == "sliding" else FullMean()
        return DetectorConfig(c, self.g(), window)


def parse_config(doc: dict) -> RunConfig:
    try:
        validate(doc, "config")
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {exc.message}") from None
    m = doc["model"]
    try:
        if m["family"] == models.PARETO:
            pair = ModelPair.pareto(m["alpha0"], m["alpha1"])
        else:
            pair = ModelPair.normal()
        cfg = RunConfig(pair, dict(doc.get("detector", {})), dict(doc.get("experiment", {})),
                        dict(doc.get("output", {})))
        pair.model(cfg.true_param)
        for v in cfg.experiment.get("true_grid", []):
            pair.model(v)
        cfg.g()
    except models.DomainError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        raise ConfigError("--config is required")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(doc)


def iter_observations(stream: TextIO, family: str) -> Iterator[float]:
    """Yield raw observations from newline-delimited values or a CSV with header ``x``.

    Blank lines are skipped. Errors carry 1-based line numbers.
    """
    first = True
    for lineno, raw in enumerate(stream, start=1):
        text = raw.strip()
        if not text:
            continue
        if first:
            first = False
            if text.lower() == "x":
                continue
        try:
            value = float(text)
        except ValueError:
            raise ObservationParseError(f"line {lineno}: cannot parse {text!r} as a number") from None
        if not math.isfinite(value):
            raise ObservationParseError(f"line {lineno}: non-finite value {text!r}")
        if family == models.PARETO and value < 1.0:
            raise ObservationSupportError(f"line {lineno}: pareto observation {value} is below 1")
        yield value


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps_json(doc: dict) -> str:
    """Canonical JSON: sorted keys, non-finite floats as null, trailing newline."""
    return json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def dumps_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def plan_dict(cfg: RunConfig, plan) -> dict:
    det = plan.detector
    out = dict(family=cfg.pair.family, true_param=plan.true_post, tau=plan.tau, c=det.c,
               u=det.g.u, mu0=det.g.mu0,
               window="sliding" if isinstance(det.window, Sliding) else "full",
               reps=plan.reps, seed=plan.seed, cap=plan.cap)
    if isinstance(det.window, Sliding):
        out["a"] = det.window.a
    if cfg.pair.family == models.PARETO:
        out.update(alpha0=cfg.pair.pre.alpha, alpha1=cfg.pair.post_ref.alpha)
    return out
