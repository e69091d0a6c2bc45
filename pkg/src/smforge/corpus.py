"""Scenario storage: description, ground-truth model, declared counts,
alias map; plus integrity verification.

A scenario is a directory:

    description.txt   the system description given to the LLM (UTF-8 prose)
    model.ump         the ground-truth machine, strict textual syntax
    meta.txt          flat key=value lines: id, example_pool, the seven
                      declared component counts, and alias lines of the
                      form ``state: generated_name = truth_name`` (same
                      for event/guard/action namespaces)

The package ships a synthetic three-scenario mini-corpus for tests and
replay fixtures. The published benchmark scenarios are external artifacts;
:func:`expected_artifact_counts` carries their declared component counts
so that, once their models are imported alongside, ``verify_counts``
checks them field by field - nothing is invented in their place.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import ir, umple
from .evaluation import AliasMap

_COUNT_KEYS = (
    "states",
    "transitions",
    "guards",
    "actions",
    "hierarchical_states",
    "parallel_regions",
    "history_states",
)


class MissingFile(FileNotFoundError):
    pass


class CorpusError(ValueError):
    pass


@dataclass
class Scenario:
    id: str
    description: str
    truth: ir.StateMachine
    declared: ir.ComponentCounts
    aliases: AliasMap
    is_example_pool_member: bool = True


@dataclass
class CountCheck:
    ok: bool
    mismatches: list[tuple[str, int, int]]  # (field, declared, actual)

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        parts = ", ".join(f"{f}: declared {d} != actual {a}" for f, d, a in self.mismatches)
        return f"mismatch ({parts})"


def _parse_meta(path: Path) -> tuple[dict[str, str], list[tuple[str, str, str]]]:
    keys: dict[str, str] = {}
    aliases: list[tuple[str, str, str]] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" in line and line.split(":", 1)[0].strip() in ("state", "event", "guard", "action"):
            namespace, rest = line.split(":", 1)
            if "=" not in rest:
                raise CorpusError(f"{path}:{lineno}: alias line needs 'generated = truth'")
            gen, truth = rest.split("=", 1)
            aliases.append((namespace.strip(), gen.strip(), truth.strip()))
            continue
        if "=" not in line:
            raise CorpusError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        keys[key.strip()] = value.strip()
    return keys, aliases


def load_scenario(path: str | Path) -> Scenario:
    """Load one scenario directory; the model parses strictly."""
    base = Path(path)
    for name in ("description.txt", "model.ump", "meta.txt"):
        if not (base / name).is_file():
            raise MissingFile(f"scenario {base} is missing {name}")

    description = (base / "description.txt").read_text(encoding="utf-8")
    doc = umple.parse_umple((base / "model.ump").read_text(encoding="utf-8"), umple.STRICT)
    assert doc.machine is not None

    keys, alias_pairs = _parse_meta(base / "meta.txt")
    counts = {}
    for key in _COUNT_KEYS:
        if key not in keys:
            raise CorpusError(f"{base}/meta.txt: missing declared count {key!r}")
        counts[key] = int(keys[key])
    return Scenario(
        id=keys.get("id", base.name),
        description=description,
        truth=doc.machine,
        declared=ir.ComponentCounts(**counts),
        aliases=AliasMap.from_pairs(alias_pairs),
        is_example_pool_member=keys.get("example_pool", "true").lower() in ("true", "yes", "1"),
    )


def verify_counts(scenario: Scenario) -> CountCheck:
    """Compare actual component counts of the truth model with the
    declared ones, field by field."""
    actual = ir.component_counts(scenario.truth).as_dict()
    declared = scenario.declared.as_dict()
    mismatches = [
        (key, declared[key], actual[key]) for key in _COUNT_KEYS if declared[key] != actual[key]
    ]
    return CountCheck(ok=not mismatches, mismatches=mismatches)


def load_corpus(directory: str | Path) -> dict[str, Scenario]:
    """Load every scenario subdirectory, keyed and ordered by scenario id."""
    base = Path(directory)
    if not base.is_dir():
        raise MissingFile(f"corpus directory {base} does not exist")
    scenarios = {}
    for sub in sorted(base.iterdir()):
        if sub.is_dir() and (sub / "meta.txt").is_file():
            scenario = load_scenario(sub)
            scenarios[scenario.id] = scenario
    if not scenarios:
        raise CorpusError(f"no scenarios found under {base}")
    return dict(sorted(scenarios.items()))


def pool_ids(scenarios: dict[str, Scenario]) -> tuple[str, ...]:
    return tuple(sid for sid, sc in sorted(scenarios.items()) if sc.is_example_pool_member)


def mini_corpus_dir() -> Path:
    return Path(__file__).parent / "data" / "mini_corpus"


def load_mini_corpus() -> dict[str, Scenario]:
    return load_corpus(mini_corpus_dir())


# ---------------------------------------------------------------------------
# Published-benchmark declarations (for imported artifact models)

_ARTIFACT_DECLARED: dict[str, ir.ComponentCounts] = {
    "printer": ir.ComponentCounts(6, 17, 6, 3, 2, 0, 1),
    "spa_manager": ir.ComponentCounts(11, 17, 4, 0, 3, 5, 1),
    "dishwasher": ir.ComponentCounts(9, 17, 4, 7, 2, 2, 1),
    "chess_clock": ir.ComponentCounts(9, 16, 4, 6, 3, 2, 1),
    "bread_maker": ir.ComponentCounts(9, 17, 4, 5, 3, 0, 1),
    "thermomix_tm6": ir.ComponentCounts(9, 17, 7, 6, 1, 0, 1),
    "w_umple": ir.ComponentCounts(17, 41, 5, 24, 5, 2, 1),
    "ssc7": ir.ComponentCounts(7, 24, 10, 16, 1, 0, 1),
}


def expected_artifact_counts(scenario_id: str) -> Optional[ir.ComponentCounts]:
    """Declared component counts for the published benchmark scenarios."""
    return _ARTIFACT_DECLARED.get(scenario_id)


def verify_artifact_scenario(scenario: Scenario) -> CountCheck:
    """Integrity check for an imported benchmark scenario: its declared
    counts must match the published declaration, and the imported model
    must reproduce them."""
    expected = expected_artifact_counts(scenario.id)
    if expected is not None and expected != scenario.declared:
        declared = scenario.declared.as_dict()
        reference = expected.as_dict()
        return CountCheck(
            ok=False,
            mismatches=[
                (key, reference[key], declared[key])
                for key in _COUNT_KEYS
                if reference[key] != declared[key]
            ],
        )
    return verify_counts(scenario)
