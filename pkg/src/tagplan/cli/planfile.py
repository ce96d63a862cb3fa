"""Plan and history files (versioned JSON)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..ga import Generation
from ..valuation import PlanningContext

PLAN_SCHEMA = "tagplan-plan/1"
HISTORY_SCHEMA = "tagplan-history/1"
ACTIONS = ("keep", "place", "remove")


class PlanFileError(ValueError):
    pass


@dataclass(frozen=True)
class TagEntry:
    slot: int
    location: int
    anchor: tuple[float, float]
    normal: tuple[float, float]
    height: float
    size: float
    size_id: int
    action: str


@dataclass(frozen=True)
class PhasePlan:
    phase: int
    name: str
    tags: tuple[TagEntry, ...]
    utility: float


@dataclass(frozen=True)
class PlanFile:
    input_hash: str
    seed: int
    metric: str
    cost_enabled: bool
    utility: float
    cost: float
    score: float
    n_plc: tuple[int, ...]
    n_rmv: int
    n_rpl: int
    phases: tuple[PhasePlan, ...]
    tool_version: str = __version__
    schema: str = PLAN_SCHEMA
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, d: dict) -> "PlanFile":
        if d.get("schema") != PLAN_SCHEMA:
            raise PlanFileError(f"unsupported plan schema {d.get('schema')!r}")
        try:
            phases = tuple(
                PhasePlan(
                    phase=p["phase"],
                    name=p["name"],
                    utility=p["utility"],
                    tags=tuple(
                        TagEntry(**{**t, "anchor": tuple(t["anchor"]), "normal": tuple(t["normal"])})
                        for t in p["tags"]
                    ),
                )
                for p in d["phases"]
            )
            fields = {k: v for k, v in d.items() if k != "phases"}
            fields["n_plc"] = tuple(fields["n_plc"])
            plan = cls(phases=phases, **fields)
        except (KeyError, TypeError) as exc:
            raise PlanFileError(f"malformed plan file: {exc}") from None
        for p in plan.phases:
            for t in p.tags:
                if t.action not in ACTIONS:
                    raise PlanFileError(f"unknown action {t.action!r}")
        return plan

    @classmethod
    def load(cls, path) -> "PlanFile":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise PlanFileError(f"{path}: not valid JSON ({exc})") from None

    def genes(self, n_phases: int, n_slots: int) -> np.ndarray:
        """Chromosome of the installed tags (actions keep and place)."""
        g = np.zeros((n_phases, n_slots), dtype=np.int8)
        for p in self.phases:
            for t in p.tags:
                if t.action != "remove":
                    if not 0 <= t.slot < n_slots or not 0 <= p.phase < n_phases:
                        raise PlanFileError(f"slot {t.slot} of phase {p.phase} does not exist in this project")
                    g[p.phase, t.slot] = t.size_id
        return g.reshape(-1)


def _entry(ctx: PlanningContext, slot_id: int, size_id: int, action: str) -> TagEntry:
    slot = ctx.slots[slot_id]
    opt = slot.option
    return TagEntry(
        slot=slot_id,
        location=opt.id,
        # + 0.0 folds negative zeros so files read cleanly
        anchor=(float(opt.anchor[0]) + 0.0, float(opt.anchor[1]) + 0.0),
        normal=(float(opt.normal[0]) + 0.0, float(opt.normal[1]) + 0.0),
        height=float(slot.height),
        size=ctx.size_of(size_id),
        size_id=size_id,
        action=action,
    )


def phase_actions(ctx: PlanningContext, genes: np.ndarray) -> list[list[TagEntry]]:
    """Per-phase tag entries consistent with :func:`count_changes`.

    A size change is a removal of the old tag and a placement of the new one.
    A tag whose location stops being feasible is gone without a removal.
    """
    g = np.asarray(genes).reshape(ctx.n_phases, ctx.n_slots)
    out = []
    for j in range(ctx.n_phases):
        entries = []
        for s in range(ctx.n_slots):
            now = int(g[j, s])
            before = int(g[j - 1, s]) if j > 0 else 0
            if j > 0 and not ctx.mask[j, s]:
                continue
            if before and before != now:
                entries.append(_entry(ctx, s, before, "remove"))
            if now:
                entries.append(_entry(ctx, s, now, "keep" if now == before else "place"))
        out.append(entries)
    return out


def build_plan(ctx: PlanningContext, genes: np.ndarray, input_hash: str, seed: int, cost_enabled: bool) -> PlanFile:
    ev = ctx.evaluate(genes)
    entries = phase_actions(ctx, genes)
    phases = tuple(
        PhasePlan(j, d.phase.name, tuple(entries[j]), float(ctx.phase_utility(genes, j)))
        for j, d in enumerate(ctx.phases)
    )
    return PlanFile(
        input_hash=input_hash,
        seed=int(seed),
        metric=ctx.params.metric_kind,
        cost_enabled=cost_enabled,
        utility=float(ev.utility),
        cost=float(ev.cost),
        score=float(ev.score),
        n_plc=tuple(int(x) for x in ev.changes.n_plc),
        n_rmv=int(ev.changes.n_rmv),
        n_rpl=int(ev.changes.n_rpl),
        phases=phases,
    )


def history_dumps(history: list[Generation]) -> str:
    doc = {
        "schema": HISTORY_SCHEMA,
        "columns": list(Generation._fields),
        "rows": [[g.iteration, g.best, g.mean, g.evaluations, g.cache_hit_rate] for g in history],
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def history_loads(text: str) -> list[Generation]:
    doc = json.loads(text)
    if doc.get("schema") != HISTORY_SCHEMA:
        raise PlanFileError("unsupported history schema")
    return [Generation(int(r[0]), float(r[1]), float(r[2]), int(r[3]), float(r[4])) for r in doc["rows"]]
