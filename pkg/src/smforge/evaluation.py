"""Deterministic scoring of a generated machine against a ground truth.

Matching is per component and one-to-one. States match on canonical name
equality or through a per-scenario alias map (the reproducible stand-in
for a human judging two names semantically equivalent). Transitions match
when their mapped endpoints and (aliased) trigger agree; a transition
touching an unmatched state is a false positive outright, and so are the
guard and actions riding on it. Composites can also match structurally,
via the set of matched direct substates; regions of parallel composites
match through substate-set correspondence under the state mapping.

Where several same-key transitions compete, the pairing is chosen to
maximize, lexicographically, (guard matches, action matches) within the
group, so the deterministic result coincides with the brute-force maximum
over all injective assignments. Candidate processing order is sorted and
name matches bind before structure-based matches, keeping every run
replay-stable.

Per component: P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R), with the
zero conventions documented on :func:`score`; a component absent from both
machines is excluded. The aggregate row pools the counts of all seven
components. Across scenarios, the default summary is the macro average
(independent arithmetic means per metric, so the averaged F1 is not the
harmonic mean of the averaged P and R); pooled summing is also available.
"""

from __future__ import annotations

import difflib
import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import ir

NAMESPACES = ("state", "event", "guard", "action")


class AliasConflict(ValueError):
    """An alias map binds one name to several counterparts."""


@dataclass
class AliasMap:
    """Bijective per-namespace name equivalences (generated -> truth).

    Names are stored canonically: :func:`smforge.ir.normalize_name` for
    states and events, :func:`smforge.ir.canonical_text` for guards and
    actions.
    """

    state: dict[str, str] = field(default_factory=dict)
    event: dict[str, str] = field(default_factory=dict)
    guard: dict[str, str] = field(default_factory=dict)
    action: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str, str]]) -> "AliasMap":
        """Build from (namespace, generated_name, truth_name) triples."""
        out = cls()
        for namespace, gen, truth in pairs:
            if namespace not in NAMESPACES:
                raise AliasConflict(f"unknown alias namespace {namespace!r}")
            canon = ir.normalize_name if namespace in ("state", "event") else ir.canonical_text
            g, t = canon(gen), canon(truth)
            table = getattr(out, namespace)
            if table.get(g, t) != t:
                raise AliasConflict(f"{namespace} alias {gen!r} maps to two names")
            if t in set(table.values()) and table.get(g) != t:
                raise AliasConflict(f"{namespace} alias target {truth!r} claimed twice")
            table[g] = t
        return out

    def lookup(self, namespace: str, gen_canon: str) -> Optional[str]:
        return getattr(self, namespace).get(gen_canon)

    def inverted(self) -> "AliasMap":
        return AliasMap(
            state={v: k for k, v in self.state.items()},
            event={v: k for k, v in self.event.items()},
            guard={v: k for k, v in self.guard.items()},
            action={v: k for k, v in self.action.items()},
        )


@dataclass
class ComponentTally:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    matched: list[tuple[str, str]] = field(default_factory=list)
    unmatched_gen: list[str] = field(default_factory=list)
    unmatched_truth: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.tp == 0 and self.fp == 0 and self.fn == 0


@dataclass
class MatchSets:
    components: dict[str, ComponentTally] = field(default_factory=dict)

    def tally(self, component: str) -> ComponentTally:
        return self.components.setdefault(component, ComponentTally())


@dataclass(frozen=True)
class MetricTriple:
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    components: dict[str, Optional[MetricTriple]]
    aggregate: Optional[MetricTriple]
    mode: str = "single"  # "single" | "macro" | "pooled"


@dataclass
class Evaluation:
    state_mapping: dict[str, str]
    sets: MatchSets
    report: EvalReport


# ---------------------------------------------------------------------------
# State matching


def match_states(
    gen: ir.StateMachine,
    truth: ir.StateMachine,
    aliases: AliasMap,
    similarity_threshold: Optional[float] = None,
) -> tuple[dict[str, str], ComponentTally]:
    """One-to-one state mapping plus the states tally.

    Exact canonical-name matches bind first, then alias matches, each pass
    in sorted canonical order. ``similarity_threshold`` turns on the
    opt-in fuzzy assist: leftovers pair with the closest unclaimed truth
    name whose similarity ratio clears the threshold. It is never used in
    acceptance tests; aliases are the accountable way to encode semantic
    matches.
    """
    ir.require_valid(gen)
    ir.require_valid(truth)
    gen_names = sorted(ir.normalize_name(n.name) for n, _, _ in ir.iter_states(gen))
    truth_names = {ir.normalize_name(n.name) for n, _, _ in ir.iter_states(truth)}

    mapping: dict[str, str] = {}
    taken: set[str] = set()
    for g in gen_names:
        if g in truth_names and g not in taken:
            mapping[g] = g
            taken.add(g)
    for g in gen_names:
        if g in mapping:
            continue
        t = aliases.lookup("state", g)
        if t is not None and t in truth_names and t not in taken:
            mapping[g] = t
            taken.add(t)
    if similarity_threshold is not None:
        for g in gen_names:
            if g in mapping:
                continue
            best: tuple[float, str] | None = None
            for t in sorted(truth_names - taken):
                ratio = difflib.SequenceMatcher(None, g, t).ratio()
                if ratio >= similarity_threshold and (best is None or ratio > best[0]):
                    best = (ratio, t)
            if best is not None:
                mapping[g] = best[1]
                taken.add(best[1])

    tally = ComponentTally()
    for g in gen_names:
        if g in mapping:
            tally.tp += 1
            tally.matched.append((g, mapping[g]))
        else:
            tally.fp += 1
            tally.unmatched_gen.append(g)
    for t in sorted(truth_names - taken):
        tally.fn += 1
        tally.unmatched_truth.append(t)
    return mapping, tally


# ---------------------------------------------------------------------------
# Transitions / guards / actions


@dataclass
class _TransView:
    key: Optional[tuple[str, str, str]]  # None when an endpoint is unmatched
    guard: Optional[str]  # canonical, alias-translated on the gen side
    actions: tuple[str, ...]  # canonical, alias-translated on the gen side
    label: str


def _views(
    sm: ir.StateMachine, mapping: Optional[dict[str, str]], aliases: Optional[AliasMap]
) -> list[_TransView]:
    views = []
    for t in sm.transitions:
        label = f"{t.source}->{t.target}" + (f" on {t.event}" if t.event else "")
        if mapping is None:  # truth side: identity view
            key = (t.source, t.target, ir.normalize_name(t.event) if t.event else "")
        else:
            src, tgt = mapping.get(t.source), mapping.get(t.target)
            if src is None or tgt is None:
                key = None
            else:
                event = ""
                if t.event:
                    e = ir.normalize_name(t.event)
                    event = aliases.lookup("event", e) or e
                key = (src, tgt, event)
        guard = None
        if t.guard is not None:
            guard = ir.canonical_text(t.guard)
            if mapping is not None:
                guard = aliases.lookup("guard", guard) or guard
        actions = []
        for a in t.actions:
            canon = ir.canonical_text(a)
            if mapping is not None:
                canon = aliases.lookup("action", canon) or canon
            actions.append(canon)
        views.append(_TransView(key=key, guard=guard, actions=tuple(actions), label=label))
    return views


def _pair_score(g: _TransView, t: _TransView) -> tuple[int, int]:
    guard_tp = int(g.guard is not None and g.guard == t.guard)
    action_tp = sum((Counter(g.actions) & Counter(t.actions)).values())
    return guard_tp, action_tp


def _best_group_pairing(
    gens: list[_TransView], truths: list[_TransView]
) -> list[tuple[_TransView, _TransView]]:
    """Pair same-key transitions maximizing (guard TPs, action TPs).

    Groups are small in practice (duplicate keys only); up to 8x8 the
    search is exhaustive, beyond that a sorted greedy pass stands in.
    """
    if not gens or not truths:
        return []
    k = min(len(gens), len(truths))
    if len(gens) * len(truths) > 64:
        order = sorted(range(len(gens)), key=lambda i: (gens[i].guard or "", gens[i].actions))
        used: set[int] = set()
        pairs = []
        for i in order:
            best_j, best = None, (-1, -1)
            for j in range(len(truths)):
                if j in used:
                    continue
                s = _pair_score(gens[i], truths[j])
                if s > best:
                    best, best_j = s, j
            if best_j is not None and len(pairs) < k:
                used.add(best_j)
                pairs.append((gens[i], truths[best_j]))
        return pairs

    best_pairs: Optional[list[tuple[int, int]]] = None
    best_score = (-1, -1)
    gen_idx = range(len(gens))
    for subset in itertools.combinations(gen_idx, k):
        for perm in itertools.permutations(range(len(truths)), k):
            score = (0, 0)
            for gi, tj in zip(subset, perm):
                s = _pair_score(gens[gi], truths[tj])
                score = (score[0] + s[0], score[1] + s[1])
            if score > best_score:
                best_score = score
                best_pairs = list(zip(subset, perm))
    assert best_pairs is not None
    return [(gens[gi], truths[tj]) for gi, tj in best_pairs]


def match_dependents(
    gen: ir.StateMachine,
    truth: ir.StateMachine,
    mapping: dict[str, str],
    aliases: AliasMap,
) -> dict[str, ComponentTally]:
    """Tally transitions, guards and actions under the state mapping.

    A generated transition with an unmatched endpoint is a false positive
    unconditionally, together with its guard and every action on it.
    """
    transitions = ComponentTally()
    guards = ComponentTally()
    actions = ComponentTally()

    gen_views = _views(gen, mapping, aliases)
    truth_views = _views(truth, None, None)

    def fp_whole(v: _TransView) -> None:
        transitions.fp += 1
        transitions.unmatched_gen.append(v.label)
        if v.guard is not None:
            guards.fp += 1
            guards.unmatched_gen.append(v.label)
        actions.fp += len(v.actions)
        actions.unmatched_gen.extend(f"{v.label}/{a}" for a in v.actions)

    def fn_whole(v: _TransView) -> None:
        transitions.fn += 1
        transitions.unmatched_truth.append(v.label)
        if v.guard is not None:
            guards.fn += 1
            guards.unmatched_truth.append(v.label)
        actions.fn += len(v.actions)
        actions.unmatched_truth.extend(f"{v.label}/{a}" for a in v.actions)

    groups: dict[tuple, tuple[list[_TransView], list[_TransView]]] = {}
    for v in gen_views:
        if v.key is None:
            fp_whole(v)
            continue
        groups.setdefault(v.key, ([], []))[0].append(v)
    for v in truth_views:
        groups.setdefault(v.key, ([], []))[1].append(v)

    for key in sorted(groups):
        gens, truths = groups[key]
        paired = _best_group_pairing(gens, truths)
        paired_gen = {id(g) for g, _ in paired}
        paired_truth = {id(t) for _, t in paired}
        for g, t in paired:
            transitions.tp += 1
            transitions.matched.append((g.label, t.label))
            if g.guard is not None and g.guard == t.guard:
                guards.tp += 1
                guards.matched.append((g.label, t.label))
            else:
                if g.guard is not None:
                    guards.fp += 1
                    guards.unmatched_gen.append(g.label)
                if t.guard is not None:
                    guards.fn += 1
                    guards.unmatched_truth.append(t.label)
            inter = Counter(g.actions) & Counter(t.actions)
            hit = sum(inter.values())
            actions.tp += hit
            actions.matched.extend((f"{g.label}/{a}", f"{t.label}/{a}") for a in sorted(inter.elements()))
            gen_left = Counter(g.actions) - Counter(t.actions)
            truth_left = Counter(t.actions) - Counter(g.actions)
            actions.fp += sum(gen_left.values())
            actions.unmatched_gen.extend(f"{g.label}/{a}" for a in sorted(gen_left.elements()))
            actions.fn += sum(truth_left.values())
            actions.unmatched_truth.extend(f"{t.label}/{a}" for a in sorted(truth_left.elements()))
        for g in gens:
            if id(g) not in paired_gen:
                fp_whole(g)
        for t in truths:
            if id(t) not in paired_truth:
                fn_whole(t)

    return {"transitions": transitions, "guards": guards, "actions": actions}


# ---------------------------------------------------------------------------
# Structures: hierarchical / parallel / history


def _composites(sm: ir.StateMachine) -> list[tuple[str, ir.StateNode]]:
    out = []
    for node, _, _ in ir.iter_states(sm):
        if node.kind == ir.COMPOSITE:
            out.append((ir.normalize_name(node.name), node))
    return out


def _direct_children(node: ir.StateNode) -> set[str]:
    return {
        ir.normalize_name(sub.name) for reg in node.regions for sub in reg.substates
    }


def match_structures(
    gen: ir.StateMachine,
    truth: ir.StateMachine,
    mapping: dict[str, str],
    aliases: AliasMap,
) -> dict[str, ComponentTally]:
    """Tally hierarchical states, parallel regions and history flags.

    Composites pair by name/alias first, then by substate-set
    correspondence under the state mapping: every direct gen substate is
    matched and their images are exactly the truth composite's direct
    substates (a symmetric criterion, so swapping the machines swaps FP
    and FN). Regions only count on composites with two or more; they pair
    by the same set correspondence within a matched parallel composite
    pair.
    """
    hierarchical = ComponentTally()
    parallel = ComponentTally()
    history = ComponentTally()

    gen_comps = dict(_composites(gen))
    truth_comps = dict(_composites(truth))
    pairs: dict[str, str] = {}
    taken: set[str] = set()

    for g in sorted(gen_comps):
        if g in truth_comps and g not in taken:
            pairs[g] = g
            taken.add(g)
            continue
        t = aliases.lookup("state", g)
        if t is not None and t in truth_comps and t not in taken:
            pairs[g] = t
            taken.add(t)

    for g in sorted(gen_comps):
        if g in pairs:
            continue
        children = _direct_children(gen_comps[g])
        if not children or not children.issubset(mapping.keys()):
            continue
        mapped = {mapping[c] for c in children}
        for t in sorted(set(truth_comps) - taken):
            if mapped == _direct_children(truth_comps[t]):
                pairs[g] = t
                taken.add(t)
                break

    for g in sorted(gen_comps):
        if g in pairs:
            hierarchical.tp += 1
            hierarchical.matched.append((g, pairs[g]))
        else:
            hierarchical.fp += 1
            hierarchical.unmatched_gen.append(g)
    for t in sorted(set(truth_comps) - taken):
        hierarchical.fn += 1
        hierarchical.unmatched_truth.append(t)

    # Regions of parallel composites. A translated gen region set of None
    # means some substate was unmatched, so the region cannot correspond.
    def region_sets(node: ir.StateNode, translate: bool) -> list[Optional[set[str]]]:
        out: list[Optional[set[str]]] = []
        for reg in node.regions:
            names = {ir.normalize_name(s.name) for s in reg.substates}
            if translate:
                if not names.issubset(mapping.keys()):
                    out.append(None)
                    continue
                names = {mapping[c] for c in names}
            out.append(names)
        return out

    for g in sorted(gen_comps):
        node = gen_comps[g]
        if len(node.regions) < 2:
            continue
        t = pairs.get(g)
        truth_node = truth_comps.get(t) if t else None
        if truth_node is None or len(truth_node.regions) < 2:
            parallel.fp += len(node.regions)
            parallel.unmatched_gen.extend(f"{g}/{r.name}" for r in node.regions)
            continue
        gen_sets = region_sets(node, translate=True)
        truth_sets = region_sets(truth_node, translate=False)
        used: set[int] = set()
        for i, gs in enumerate(gen_sets):
            hit = None
            if gs is not None:
                for j, ts in enumerate(truth_sets):
                    if j not in used and gs == ts:
                        hit = j
                        break
            if hit is None:
                parallel.fp += 1
                parallel.unmatched_gen.append(f"{g}/{node.regions[i].name}")
            else:
                used.add(hit)
                parallel.tp += 1
                parallel.matched.append((f"{g}/{node.regions[i].name}", f"{t}/{truth_node.regions[hit].name}"))
        for j, reg in enumerate(truth_node.regions):
            if j not in used:
                parallel.fn += 1
                parallel.unmatched_truth.append(f"{t}/{reg.name}")
    matched_truth_parallel = set()
    for g, t in pairs.items():
        if len(gen_comps[g].regions) >= 2 and len(truth_comps[t].regions) >= 2:
            matched_truth_parallel.add(t)
    for t in sorted(truth_comps):
        node = truth_comps[t]
        if len(node.regions) < 2 or t in matched_truth_parallel:
            continue
        parallel.fn += len(node.regions)
        parallel.unmatched_truth.extend(f"{t}/{r.name}" for r in node.regions)

    # History flags.
    flagged_truth = {t for t, node in truth_comps.items() if node.has_history}
    claimed: set[str] = set()
    for g in sorted(gen_comps):
        if not gen_comps[g].has_history:
            continue
        t = pairs.get(g)
        if t is not None and t in flagged_truth:
            history.tp += 1
            history.matched.append((g, t))
            claimed.add(t)
        else:
            history.fp += 1
            history.unmatched_gen.append(g)
    for t in sorted(flagged_truth - claimed):
        history.fn += 1
        history.unmatched_truth.append(t)

    return {"hierarchical": hierarchical, "parallel": parallel, "history": history}


# ---------------------------------------------------------------------------
# Metrics


def _metric(tp: int, fp: int, fn: int) -> MetricTriple:
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return MetricTriple(precision=precision, recall=recall, f1=f1)


def score(sets: MatchSets) -> EvalReport:
    """Compute P/R/F1 per component and pooled over all components.

    Conventions: with TP+FP = 0, precision is 0 (there was something to
    find, FN > 0); with TP+FN = 0, recall is 0; with P+R = 0, F1 is 0. A
    component with TP = FP = FN = 0 does not occur in either machine and is
    excluded (None). The aggregate is computed from summed counts.
    """
    components: dict[str, Optional[MetricTriple]] = {}
    total_tp = total_fp = total_fn = 0
    any_counts = False
    for comp in ir.COMPONENTS:
        tally = sets.components.get(comp, ComponentTally())
        if tally.empty:
            components[comp] = None
            continue
        any_counts = True
        total_tp += tally.tp
        total_fp += tally.fp
        total_fn += tally.fn
        components[comp] = _metric(tally.tp, tally.fp, tally.fn)
    aggregate = _metric(total_tp, total_fp, total_fn) if any_counts else None
    return EvalReport(components=components, aggregate=aggregate, mode="single")


def evaluate(
    gen: ir.StateMachine,
    truth: ir.StateMachine,
    aliases: Optional[AliasMap] = None,
    similarity_threshold: Optional[float] = None,
) -> Evaluation:
    """Full evaluation: state mapping, per-component tallies, report."""
    aliases = aliases or AliasMap()
    mapping, states_tally = match_states(gen, truth, aliases, similarity_threshold)
    sets = MatchSets()
    sets.components["states"] = states_tally
    sets.components.update(match_dependents(gen, truth, mapping, aliases))
    sets.components.update(match_structures(gen, truth, mapping, aliases))
    return Evaluation(state_mapping=mapping, sets=sets, report=score(sets))


def macro_average(reports: list[EvalReport]) -> EvalReport:
    """Arithmetic mean of each metric over the scenarios where the
    component was not excluded. The averaged F1 is deliberately not the
    harmonic mean of the averaged precision and recall."""
    if not reports:
        raise ValueError("macro_average needs at least one report")

    def mean(triples: list[MetricTriple]) -> Optional[MetricTriple]:
        if not triples:
            return None
        n = len(triples)
        return MetricTriple(
            precision=sum(t.precision for t in triples) / n,
            recall=sum(t.recall for t in triples) / n,
            f1=sum(t.f1 for t in triples) / n,
        )

    components: dict[str, Optional[MetricTriple]] = {}
    for comp in ir.COMPONENTS:
        present = [r.components.get(comp) for r in reports]
        components[comp] = mean([t for t in present if t is not None])
    aggregate = mean([r.aggregate for r in reports if r.aggregate is not None])
    return EvalReport(components=components, aggregate=aggregate, mode="macro")


def pooled_average(sets_list: list[MatchSets]) -> EvalReport:
    """Sum counts across scenarios per component, then compute metrics."""
    if not sets_list:
        raise ValueError("pooled_average needs at least one match set")
    pooled = MatchSets()
    for sets in sets_list:
        for comp in ir.COMPONENTS:
            tally = sets.components.get(comp)
            if tally is None:
                continue
            agg = pooled.tally(comp)
            agg.tp += tally.tp
            agg.fp += tally.fp
            agg.fn += tally.fn
    report = score(pooled)
    report.mode = "pooled"
    return report
