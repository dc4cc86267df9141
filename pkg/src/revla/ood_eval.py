"""Success-rate accounting for manipulation evaluation episodes.

Consumes newline-delimited JSON episode logs (one grasp/lift outcome per
line) and aggregates them into per-policy success tables with single /
distractor / total marginals, partial-success (grasp vs lift) summaries,
and relative-improvement figures. Rates are exact ratios of integer counts
until presentation, where they are rounded half-up to three decimals;
marginals are always episode-weighted means of raw counts, never averages
of rounded cells, so published-style tables can be recomputed from raw
records without trusting printed totals.

Simulation is deliberately out of scope: any simulator that can emit the
log schema below can be scored here.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

OOD_OBJECTS = ("pear", "mustard_bottle", "tomato_can")
IN_DOMAIN_OBJECT = "coke_can"
IN_DOMAIN_DISTRACTORS = ("coke_can", "redbull_can")
SUB_SETTINGS = ("horizontal", "vertical", "standing")

SETTING_SINGLE = "single"
SETTING_DISTRACTOR = "distractor"
SETTINGS = (SETTING_SINGLE, SETTING_DISTRACTOR)

PROTOCOL_VISUAL_MATCHING = "visual_matching"
PROTOCOL_VARIANT_AGGREGATION = "variant_aggregation"
PROTOCOLS = (PROTOCOL_VISUAL_MATCHING, PROTOCOL_VARIANT_AGGREGATION)

METRIC_LIFT = "lift"
METRIC_GRASP = "grasp"
METRICS = (METRIC_LIFT, METRIC_GRASP)

DEFAULT_EPISODES_PER_SETTING = 36

LOG_FIELDS = (
    "policy",
    "object",
    "setting",
    "protocol",
    "episode",
    "grasp_success",
    "lift_success",
    "sub_setting",
)


class EvalLogError(ValueError):
    """An episode log violates the record schema or its invariants."""


class UnknownScenarioError(ValueError):
    """Records reference scenarios outside the declared suite."""


class DuplicateEpisodeError(ValueError):
    """The same (policy, scenario, episode id) appears more than once."""


def round_rate(successes: int, episodes: int, places: int = 3) -> float:
    """Exact ratio of counts, rounded half-up to ``places`` decimals."""
    if episodes <= 0:
        raise ValueError(f"episode count must be positive, got {episodes}")
    ratio = Decimal(successes) / Decimal(episodes)
    return float(ratio.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def relative_improvement(candidate: float, baseline: float) -> int:
    """Percentage change of ``candidate`` over ``baseline``, nearest integer."""
    if baseline <= 0:
        raise ValueError(f"baseline rate must be positive, got {baseline}")
    pct = 100 * (Decimal(repr(candidate)) - Decimal(repr(baseline))) / Decimal(repr(baseline))
    return int(pct.quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class ScenarioSpec:
    """One evaluated condition: a target object in a single or cluttered scene."""

    target_object: str
    setting: str
    protocol: str = PROTOCOL_VISUAL_MATCHING
    episodes_per_setting: int = DEFAULT_EPISODES_PER_SETTING
    distractor_objects: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}; expected one of {SETTINGS}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        if self.episodes_per_setting <= 0:
            raise ValueError("episodes_per_setting must be positive")
        if self.setting == SETTING_SINGLE and self.distractor_objects:
            raise ValueError("single setting cannot list distractor objects")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.target_object, self.setting, self.protocol)


@dataclass(frozen=True)
class EpisodeRecord:
    """One rollout's outcome; lifting implies a grasp happened first."""

    policy: str
    target_object: str
    setting: str
    protocol: str
    episode: int
    grasp_success: bool
    lift_success: bool
    sub_setting: str | None = None

    def __post_init__(self) -> None:
        if not self.policy:
            raise ValueError("policy must be a non-empty string")
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}; expected one of {SETTINGS}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        if self.episode < 0:
            raise ValueError(f"episode id must be non-negative, got {self.episode}")
        if self.lift_success and not self.grasp_success:
            raise ValueError("lift_success without grasp_success (a lift requires a grasp)")

    @property
    def scenario_key(self) -> tuple[str, str, str]:
        return (self.target_object, self.setting, self.protocol)

    def to_json_obj(self) -> dict:
        return {
            "policy": self.policy,
            "object": self.target_object,
            "setting": self.setting,
            "protocol": self.protocol,
            "episode": self.episode,
            "grasp_success": self.grasp_success,
            "lift_success": self.lift_success,
            "sub_setting": self.sub_setting,
        }


@dataclass(frozen=True)
class Cell:
    """Raw counts backing one table cell."""

    episodes: int = 0
    grasp_successes: int = 0
    lift_successes: int = 0

    def merged(self, other: "Cell") -> "Cell":
        return Cell(
            self.episodes + other.episodes,
            self.grasp_successes + other.grasp_successes,
            self.lift_successes + other.lift_successes,
        )

    def successes(self, metric: str) -> int:
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
        return self.lift_successes if metric == METRIC_LIFT else self.grasp_successes

    def rate(self, metric: str) -> float:
        return round_rate(self.successes(metric), self.episodes)


CellKey = tuple[str, str, str, str, str | None]  # policy, object, setting, protocol, sub


@dataclass(frozen=True)
class SuccessTable:
    """Aggregated counts at full resolution plus rounded-rate views."""

    metric: str
    cells: Mapping[CellKey, Cell]

    def policies(self) -> list[str]:
        return sorted({key[0] for key in self.cells})

    def objects(self, policy: str | None = None) -> list[str]:
        return sorted({k[1] for k in self.cells if policy is None or k[0] == policy})

    def counts(
        self,
        policy: str | None = None,
        target_object: str | None = None,
        setting: str | None = None,
        protocol: str | None = None,
        sub_setting: str | None = None,
    ) -> Cell:
        """Merged raw counts over every cell matching the given filters."""
        total = Cell()
        for (pol, obj, sett, proto, sub), cell in self.cells.items():
            if policy is not None and pol != policy:
                continue
            if target_object is not None and obj != target_object:
                continue
            if setting is not None and sett != setting:
                continue
            if protocol is not None and proto != protocol:
                continue
            if sub_setting is not None and sub != sub_setting:
                continue
            total = total.merged(cell)
        return total

    def rate(self, policy: str, target_object: str, setting: str, **filters) -> float:
        return self.counts(policy, target_object, setting, **filters).rate(self.metric)

    def setting_rate(self, policy: str, setting: str) -> float:
        return self.counts(policy, setting=setting).rate(self.metric)

    def total_rate(self, policy: str) -> float:
        return self.counts(policy).rate(self.metric)

    def grasp_rate(self, policy: str) -> float:
        return self.counts(policy).rate(METRIC_GRASP)

    def lift_rate(self, policy: str) -> float:
        return self.counts(policy).rate(METRIC_LIFT)

    def sub_setting_rates(self, policy: str, target_object: str, protocol: str) -> dict[str, float]:
        """Per-sub-setting rates plus their episode-weighted average."""
        subs = sorted(
            {k[4] for k in self.cells if k[0] == policy and k[1] == target_object and k[3] == protocol and k[4]}
        )
        out = {
            sub: self.counts(policy, target_object, protocol=protocol, sub_setting=sub).rate(self.metric)
            for sub in subs
        }
        out["average"] = self.counts(policy, target_object, protocol=protocol).rate(self.metric)
        return out

    def to_dict(self) -> dict:
        cells = []
        for key in sorted(self.cells, key=lambda k: tuple(str(p) for p in k)):
            policy, obj, setting, protocol, sub = key
            cell = self.cells[key]
            cells.append({
                "policy": policy,
                "object": obj,
                "setting": setting,
                "protocol": protocol,
                "sub_setting": sub,
                "episodes": cell.episodes,
                "grasp_successes": cell.grasp_successes,
                "lift_successes": cell.lift_successes,
                "rate": cell.rate(self.metric),
            })
        policies = {}
        for policy in self.policies():
            policies[policy] = {
                "single": self.setting_rate(policy, SETTING_SINGLE)
                if self.counts(policy, setting=SETTING_SINGLE).episodes else None,
                "distractor": self.setting_rate(policy, SETTING_DISTRACTOR)
                if self.counts(policy, setting=SETTING_DISTRACTOR).episodes else None,
                "total": self.total_rate(policy),
                "grasp_rate": self.grasp_rate(policy),
                "lift_rate": self.lift_rate(policy),
            }
        return {"metric": self.metric, "cells": cells, "policies": policies}


def scenario_suite(
    episodes_per_setting: int = DEFAULT_EPISODES_PER_SETTING,
) -> list[ScenarioSpec]:
    """The out-of-domain suite plus the in-domain pick-can scenarios."""
    suite = ood_suite(episodes_per_setting)
    for protocol in PROTOCOLS:
        suite.append(
            ScenarioSpec(IN_DOMAIN_OBJECT, SETTING_SINGLE, protocol, episodes_per_setting)
        )
    return suite


def ood_suite(episodes_per_setting: int = DEFAULT_EPISODES_PER_SETTING) -> list[ScenarioSpec]:
    """Three unseen objects, each evaluated alone and among distractors."""
    suite = []
    for obj in OOD_OBJECTS:
        others = tuple(o for o in OOD_OBJECTS if o != obj)
        suite.append(ScenarioSpec(obj, SETTING_SINGLE, episodes_per_setting=episodes_per_setting))
        suite.append(
            ScenarioSpec(
                obj,
                SETTING_DISTRACTOR,
                episodes_per_setting=episodes_per_setting,
                distractor_objects=others + IN_DOMAIN_DISTRACTORS,
            )
        )
    return suite


def aggregate(
    records: Sequence[EpisodeRecord],
    success_field: str = METRIC_LIFT,
    scenarios: Sequence[ScenarioSpec] | None = None,
) -> SuccessTable:
    """Count successes per (policy, object, setting, protocol, sub-setting).

    Every record must reference a declared scenario and no (policy,
    scenario, episode) may repeat. Episode counts are taken from the log
    itself, not from the scenario's nominal count.
    """
    if success_field not in METRICS:
        raise ValueError(f"unknown metric {success_field!r}; expected one of {METRICS}")
    if not records:
        raise EvalLogError("no records")
    declared = {spec.key for spec in (scenario_suite() if scenarios is None else scenarios)}
    unknown = sorted({r.scenario_key for r in records} - declared)
    if unknown:
        raise UnknownScenarioError(f"records reference undeclared scenarios: {unknown}")
    seen = Counter(
        (r.policy, r.target_object, r.setting, r.protocol, r.sub_setting, r.episode)
        for r in records
    )
    dupes = sorted(key for key, n in seen.items() if n > 1)
    if dupes:
        raise DuplicateEpisodeError(f"duplicate episode ids: {dupes}")

    cells: dict[CellKey, Cell] = {}
    for r in records:
        key = (r.policy, r.target_object, r.setting, r.protocol, r.sub_setting)
        cell = cells.get(key, Cell())
        cells[key] = Cell(
            cell.episodes + 1,
            cell.grasp_successes + int(r.grasp_success),
            cell.lift_successes + int(r.lift_success),
        )
    return SuccessTable(success_field, cells)


def partial_success_summary(records: Sequence[EpisodeRecord]) -> dict[str, tuple[float, float]]:
    """Overall (grasp rate, lift rate) per policy across all records."""
    if not records:
        raise EvalLogError("no records")
    totals: dict[str, Cell] = {}
    for r in records:
        cell = totals.get(r.policy, Cell())
        totals[r.policy] = Cell(
            cell.episodes + 1,
            cell.grasp_successes + int(r.grasp_success),
            cell.lift_successes + int(r.lift_success),
        )
    return {
        policy: (cell.rate(METRIC_GRASP), cell.rate(METRIC_LIFT))
        for policy, cell in sorted(totals.items())
    }


def expand_cell(
    policy: str,
    target_object: str,
    setting: str,
    *,
    episodes: int,
    lift_successes: int,
    grasp_successes: int | None = None,
    protocol: str = PROTOCOL_VISUAL_MATCHING,
    sub_setting: str | None = None,
    first_episode: int = 0,
) -> list[EpisodeRecord]:
    """Synthesize per-episode records realizing the given success counts.

    The first ``lift_successes`` episodes grasp and lift, the next
    ``grasp_successes - lift_successes`` grasp only, the rest fail.
    """
    if grasp_successes is None:
        grasp_successes = lift_successes
    if not 0 <= lift_successes <= grasp_successes <= episodes:
        raise ValueError(
            f"need 0 <= lift ({lift_successes}) <= grasp ({grasp_successes}) "
            f"<= episodes ({episodes})"
        )
    records = []
    for i in range(episodes):
        records.append(
            EpisodeRecord(
                policy=policy,
                target_object=target_object,
                setting=setting,
                protocol=protocol,
                episode=first_episode + i,
                grasp_success=i < grasp_successes,
                lift_success=i < lift_successes,
                sub_setting=sub_setting,
            )
        )
    return records


def _record_from_json_obj(obj: dict) -> EpisodeRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    missing = [f for f in LOG_FIELDS if f not in obj]
    if missing:
        raise ValueError(f"missing fields: {missing}")
    extra = sorted(set(obj) - set(LOG_FIELDS))
    if extra:
        raise ValueError(f"unexpected fields: {extra}")
    if not isinstance(obj["policy"], str):
        raise ValueError("policy must be a string")
    if not isinstance(obj["object"], str):
        raise ValueError("object must be a string")
    if not isinstance(obj["episode"], int) or isinstance(obj["episode"], bool):
        raise ValueError("episode must be an integer")
    for flag in ("grasp_success", "lift_success"):
        if not isinstance(obj[flag], bool):
            raise ValueError(f"{flag} must be a boolean")
    if obj["sub_setting"] is not None and not isinstance(obj["sub_setting"], str):
        raise ValueError("sub_setting must be a string or null")
    return EpisodeRecord(
        policy=obj["policy"],
        target_object=obj["object"],
        setting=obj["setting"],
        protocol=obj["protocol"],
        episode=obj["episode"],
        grasp_success=obj["grasp_success"],
        lift_success=obj["lift_success"],
        sub_setting=obj["sub_setting"],
    )


def parse_episode_log(path: str | Path) -> list[EpisodeRecord]:
    """Read a newline-delimited JSON episode log, naming every bad line."""
    records: list[EpisodeRecord] = []
    problems: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(_record_from_json_obj(obj))
            except (json.JSONDecodeError, ValueError) as exc:
                problems.append(f"line {lineno}: {exc}")
    if problems:
        raise EvalLogError(f"invalid episode log {path}:\n" + "\n".join(problems))
    return records


def write_episode_log(records: Iterable[EpisodeRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_obj(), sort_keys=True) + "\n")


def _format_table(rows: list[tuple[str, ...]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(rate: float) -> str:
    return f"{rate:.3f}"


def render_ood_table(table: SuccessTable) -> str:
    """Text table: per-object cells under each setting plus marginals.

    Marginals cover the out-of-domain objects only, so mixing in-domain
    records into the same log does not skew this view.
    """

    def ood_counts(policy: str, setting: str | None) -> Cell:
        total = Cell()
        for obj in OOD_OBJECTS:
            total = total.merged(table.counts(policy, obj, setting))
        return total

    header = ["policy"]
    for setting in SETTINGS:
        header.extend(f"{obj}/{setting}" for obj in OOD_OBJECTS)
    header.extend(["single", "distractor", "total"])
    rows = [tuple(header)]
    for policy in table.policies():
        row = [policy]
        for setting in SETTINGS:
            for obj in OOD_OBJECTS:
                counts = table.counts(policy, obj, setting)
                row.append(_fmt(counts.rate(table.metric)) if counts.episodes else "-")
        for setting in SETTINGS:
            counts = ood_counts(policy, setting)
            row.append(_fmt(counts.rate(table.metric)) if counts.episodes else "-")
        overall = ood_counts(policy, None)
        row.append(_fmt(overall.rate(table.metric)) if overall.episodes else "-")
        rows.append(tuple(row))
    return _format_table(rows)


def render_in_domain_table(table: SuccessTable, target_object: str = IN_DOMAIN_OBJECT) -> str:
    """Text table of per-sub-setting rates grouped by protocol."""
    sections = []
    for protocol in PROTOCOLS:
        policies = [
            p for p in table.policies()
            if table.counts(p, target_object, protocol=protocol).episodes
        ]
        if not policies:
            continue
        rows = [("policy",) + SUB_SETTINGS + ("average",)]
        for policy in policies:
            rates = table.sub_setting_rates(policy, target_object, protocol)
            rows.append(
                (policy,)
                + tuple(_fmt(rates[s]) if s in rates else "-" for s in SUB_SETTINGS)
                + (_fmt(rates["average"]),)
            )
        sections.append(f"[{protocol}]\n" + _format_table(rows))
    return "\n".join(sections)


def render_partial_success(summary: Mapping[str, tuple[float, float]]) -> str:
    rows = [("policy", "grasp", "lift")]
    for policy, (grasp, lift) in summary.items():
        rows.append((policy, _fmt(grasp), _fmt(lift)))
    return _format_table(rows)
