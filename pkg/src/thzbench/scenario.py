"""Scenario files: one JSON document wiring a cluster description, link
budget parameters, workload, windows and seed into a runnable benchmark or
server target.

Paths inside a scenario resolve relative to the scenario file itself, so a
configs/ directory stays relocatable. A benchmark set file carries shared
defaults plus a list of scenario entries, each of which overrides the
defaults field by field.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from .cluster import ClusterSpec, SsiError, parse_ssi
from .estimator import LinkBudgetParams
from .loadgen import Windows, Workload


class ConfigError(Exception):
    """Scenario document is missing, malformed, or references absent files."""


def parse_users_range(text: str) -> list[int]:
    """``start:end:step`` into an ascending level list, end always included."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"users range must be start:end:step, got {text!r}")
    try:
        start, end, step = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"users range fields must be integers: {text!r}")
    if start < 1 or end < start or step < 1:
        raise ConfigError(f"users range needs 1 <= start <= end, step >= 1: {text!r}")
    levels = list(range(start, end + 1, step))
    if levels[-1] != end:
        levels.append(end)
    return levels


@dataclass(frozen=True)
class ScenarioConfig:
    """A fully resolved scenario: everything a sweep or server needs."""

    name: str
    cluster: ClusterSpec
    params: LinkBudgetParams
    workload: Workload
    windows: Windows
    levels: tuple
    seed: Optional[int]
    store_path: Optional[str] = None
    bind: str = "127.0.0.1:8080"

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError(f"scenario {self.name!r} needs a seed for simulation")
        return self.seed


def _load_json(path: str) -> Any:
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}")


def _resolve(base_dir: str, ref: str) -> str:
    if os.path.isabs(ref):
        return ref
    return os.path.normpath(os.path.join(base_dir, ref))


def _build_workload(doc: dict) -> Workload:
    try:
        return Workload(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad workload block: {exc}")


def _build_windows(doc: dict) -> Windows:
    try:
        return Windows(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad windows block: {exc}")


def _parse_levels(raw: Any) -> tuple:
    if isinstance(raw, str):
        return tuple(parse_users_range(raw))
    if isinstance(raw, list):
        if not raw or any(not isinstance(v, int) or v < 1 for v in raw):
            raise ConfigError("levels list must hold positive integers")
        return tuple(sorted(raw))
    raise ConfigError(f"levels must be a range string or a list, got {type(raw).__name__}")


def scenario_from_doc(doc: dict, base_dir: str, defaults: Optional[dict] = None) -> ScenarioConfig:
    """Resolve one scenario entry over an optional defaults block."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario entry must be a JSON object")
    merged: dict[str, Any] = dict(defaults or {})
    merged.update(doc)

    name = merged.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError("scenario needs a nonempty name")

    ssi_ref = merged.get("ssi")
    if isinstance(ssi_ref, str):
        ssi_doc = _load_json(_resolve(base_dir, ssi_ref))
    elif isinstance(ssi_ref, dict):
        ssi_doc = ssi_ref
    else:
        raise ConfigError(f"scenario {name!r} needs an ssi path or inline object")
    try:
        cluster = parse_ssi(ssi_doc)
    except SsiError as exc:
        raise ConfigError(f"scenario {name!r}: {exc}")

    lb_ref = merged.get("linkbudget")
    if lb_ref is None:
        params = LinkBudgetParams()
    elif isinstance(lb_ref, str):
        params = LinkBudgetParams.from_json_file(_resolve(base_dir, lb_ref))
    elif isinstance(lb_ref, dict):
        params = LinkBudgetParams.from_dict(lb_ref)
    else:
        raise ConfigError(f"scenario {name!r}: linkbudget must be a path or object")

    workload = _build_workload(merged.get("workload", {}))
    windows = _build_windows(merged.get("windows", {}))
    levels = _parse_levels(merged.get("levels", "50:1300:50"))

    seed = merged.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError(f"scenario {name!r}: seed must be an integer")

    store_path = merged.get("store_path")
    if store_path is not None:
        if not isinstance(store_path, str):
            raise ConfigError(f"scenario {name!r}: store_path must be a string")
        store_path = _resolve(base_dir, store_path)

    bind = merged.get("bind", "127.0.0.1:8080")
    if not isinstance(bind, str) or ":" not in bind:
        raise ConfigError(f"scenario {name!r}: bind must be host:port")

    return ScenarioConfig(
        name=name,
        cluster=cluster,
        params=params,
        workload=workload,
        windows=windows,
        levels=levels,
        seed=seed,
        store_path=store_path,
        bind=bind,
    )


def load_scenario(path: str) -> ScenarioConfig:
    doc = _load_json(path)
    base_dir = os.path.dirname(os.path.abspath(path))
    if "scenarios" in doc:
        raise ConfigError(
            f"{path} is a benchmark set; load it with load_benchmark_set"
        )
    return scenario_from_doc(doc, base_dir)


def load_benchmark_set(path: str) -> list[ScenarioConfig]:
    """A defaults block plus scenario entries, resolved in file order."""
    doc = _load_json(path)
    base_dir = os.path.dirname(os.path.abspath(path))
    if not isinstance(doc, dict) or "scenarios" not in doc:
        raise ConfigError(f"{path} has no scenarios list")
    defaults = doc.get("defaults", {})
    if not isinstance(defaults, dict):
        raise ConfigError("defaults must be a JSON object")
    entries = doc["scenarios"]
    if not isinstance(entries, list) or not entries:
        raise ConfigError("scenarios must be a nonempty list")
    scenarios = [scenario_from_doc(e, base_dir, defaults) for e in entries]
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ConfigError("scenario names must be unique within a set")
    return scenarios
