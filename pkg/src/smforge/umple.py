"""Emitter and parser for the Umple-style textual state machine syntax.

The dialect is the subset the pipeline scores:

    class Name {
      sm {
        StateName {
          event [guard] / { action1; action2 } -> Target;
          Nested { ... }
          ||
          H;
        }
      }
    }

The ``class``/``sm`` wrapper is optional on input. ``||`` separates the
orthogonal regions of a composite; a bare ``H`` line flags shallow history
on the enclosing composite; the first substate of a region is its initial
state. ``//`` comments are skipped. Transition targets may name any state
in the tree by simple name.

Two parse modes: *strict* (any grammar violation raises
:class:`ParseFailed` carrying error diagnostics) and *lenient* (markdown
fences are unwrapped, unparseable stretches are skipped with warnings, and
a best-effort machine always comes back - the mode pointed at raw LLM
output).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from . import ir

STRICT = "strict"
LENIENT = "lenient"

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_WRAPPER_WORDS = {"sm", "statemachine", "class", "state", "machine"}


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    severity: str  # "warning" | "error"
    message: str

    def __str__(self) -> str:
        return f"{self.severity} (line {self.line}): {self.message}"


@dataclass
class UmpleDocument:
    source_text: str
    machine: Optional[ir.StateMachine]
    diagnostics: list[ParseDiagnostic] = field(default_factory=list)


class ParseFailed(ValueError):
    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = diagnostics
        first = next((d for d in diagnostics if d.severity == "error"), None)
        super().__init__(f"strict parse failed: {first}")


# ---------------------------------------------------------------------------
# Emission


def emit_umple(sm: ir.StateMachine) -> str:
    """Render a valid machine in the textual syntax, LF-terminated.

    Within each region the initial substate is written first; a state's own
    outgoing transitions are written after its nested regions.
    """
    ir.require_valid(sm)
    display = {ir.normalize_name(n.name): n.name for n, _, _ in ir.iter_states(sm)}
    by_source: dict[str, list[ir.Transition]] = {}
    for t in sm.transitions:
        by_source.setdefault(t.source, []).append(t)

    lines: list[str] = [f"class {sm.name} {{", "  sm {"]

    def emit_transition(t: ir.Transition, pad: str) -> None:
        parts = []
        if t.event:
            parts.append(t.event)
        if t.guard is not None:
            parts.append(f"[{t.guard}]")
        if t.actions:
            parts.append("/ { " + "; ".join(t.actions) + " }")
        head = " ".join(parts)
        head = head + " " if head else ""
        lines.append(f"{pad}{head}-> {display[t.target]};")

    def emit_state(node: ir.StateNode, depth: int) -> None:
        pad = "  " * depth
        lines.append(f"{pad}{node.name} {{")
        inner = "  " * (depth + 1)
        if node.has_history:
            lines.append(f"{inner}H;")
        for i, reg in enumerate(node.regions):
            if i > 0:
                lines.append(f"{inner}||")
            for sub in ir.emission_order(reg):
                emit_state(sub, depth + 1)
        for t in by_source.get(ir.normalize_name(node.name), ()):
            emit_transition(t, inner)
        lines.append(f"{pad}}}")

    for root in sm.root_states:
        emit_state(root, 2)
    lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Tokenizer

_T_IDENT = "ident"
_T_LBRACE = "lbrace"
_T_RBRACE = "rbrace"
_T_SEMI = "semi"
_T_ARROW = "arrow"
_T_PARALLEL = "parallel"
_T_GUARD = "guard"
_T_ACTIONS = "actions"


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int


def _tokenize(text: str, mode: str, diags: list[ParseDiagnostic]) -> list[_Token]:
    tokens: list[_Token] = []
    i, line = 0, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            i += 1
            continue
        if c.isspace():
            i += 1
            continue
        if text.startswith("//", i):
            nl = text.find("\n", i)
            i = n if nl < 0 else nl
            continue
        if text.startswith("||", i):
            tokens.append(_Token(_T_PARALLEL, "||", line))
            i += 2
            continue
        if text.startswith("->", i):
            tokens.append(_Token(_T_ARROW, "->", line))
            i += 2
            continue
        if c == "{":
            tokens.append(_Token(_T_LBRACE, c, line))
            i += 1
            continue
        if c == "}":
            tokens.append(_Token(_T_RBRACE, c, line))
            i += 1
            continue
        if c == ";":
            tokens.append(_Token(_T_SEMI, c, line))
            i += 1
            continue
        if c == "[":
            end = text.find("]", i + 1)
            if end < 0:
                if mode == STRICT:
                    diags.append(ParseDiagnostic(line, "error", "unterminated guard bracket"))
                    return tokens
                diags.append(ParseDiagnostic(line, "warning", "unterminated guard bracket skipped"))
                nl = text.find("\n", i)
                i = n if nl < 0 else nl
                continue
            guard = text[i + 1 : end].strip()
            line += text.count("\n", i, end)
            tokens.append(_Token(_T_GUARD, guard, line))
            i = end + 1
            continue
        if c == "/":
            # An action block: "/ { a; b }". The brace contents are opaque.
            j = i + 1
            while j < n and text[j] in " \t":
                j += 1
            if j < n and text[j] == "{":
                end = text.find("}", j + 1)
                if end < 0:
                    if mode == STRICT:
                        diags.append(ParseDiagnostic(line, "error", "unterminated action block"))
                        return tokens
                    diags.append(ParseDiagnostic(line, "warning", "unterminated action block skipped"))
                    nl = text.find("\n", i)
                    i = n if nl < 0 else nl
                    continue
                body = text[j + 1 : end]
                line += text.count("\n", i, end)
                tokens.append(_Token(_T_ACTIONS, body, line))
                i = end + 1
                continue
            if mode == STRICT:
                diags.append(ParseDiagnostic(line, "error", "'/' must introduce an action block"))
                return tokens
            diags.append(ParseDiagnostic(line, "warning", "stray '/' skipped"))
            i += 1
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            tokens.append(_Token(_T_IDENT, m.group(0), line))
            i = m.end()
            continue
        if mode == STRICT:
            diags.append(ParseDiagnostic(line, "error", f"unexpected character {c!r}"))
            return tokens
        diags.append(ParseDiagnostic(line, "warning", f"unexpected character {c!r} skipped"))
        i += 1
    return tokens


# ---------------------------------------------------------------------------
# Parser

# Intermediate mutable tree; frozen IR nodes are built at the end.
@dataclass
class _ProtoState:
    name: str
    line: int
    chunks: list[list["_ProtoState"]] = field(default_factory=list)  # region chunks
    has_history: bool = False

    def all_children(self) -> list["_ProtoState"]:
        return [s for chunk in self.chunks for s in chunk]


@dataclass
class _ProtoTransition:
    source: str  # display name of the enclosing state
    target: str  # display name as written
    event: Optional[str]
    guard: Optional[str]
    actions: tuple[str, ...]
    line: int


class _Parser:
    def __init__(self, tokens: list[_Token], mode: str, diags: list[ParseDiagnostic]):
        self.tokens = tokens
        self.mode = mode
        self.diags = diags
        self.pos = 0
        self.machine_name = "machine"
        self.roots: list[_ProtoState] = []
        self.transitions: list[_ProtoTransition] = []
        self.failed = False

    # -- token helpers

    def peek(self, offset: int = 0) -> Optional[_Token]:
        idx = self.pos + offset
        return self.tokens[idx] if idx < len(self.tokens) else None

    def take(self) -> Optional[_Token]:
        tok = self.peek()
        if tok is not None:
            self.pos += 1
        return tok

    def error(self, line: int, message: str) -> None:
        if self.mode == STRICT:
            self.diags.append(ParseDiagnostic(line, "error", message))
            self.failed = True
        else:
            self.diags.append(ParseDiagnostic(line, "warning", message + " (skipped)"))

    # -- grammar

    def parse_document(self) -> None:
        self.skip_wrappers()
        while self.peek() is not None and not self.failed:
            tok = self.peek()
            if tok.kind == _T_RBRACE:
                self.take()  # wrapper closers; surplus ones are harmless
                continue
            state = self.parse_state_or_skip(top_level=True)
            if state is not None:
                self.roots.append(state)

    def skip_wrappers(self) -> None:
        """Consume ``class X {`` and ``sm {`` style wrapper openers.

        At most two levels are consumed (class wrapper, then the state
        machine wrapper); once the state machine level is seen, everything
        after it is state content, so a root state that happens to share a
        keyword-like name is not swallowed.
        """
        seen_class = False
        while True:
            tok = self.peek()
            if tok is None or tok.kind != _T_IDENT:
                return
            # Gather the identifier run before a brace.
            idents = []
            k = 0
            while True:
                t = self.peek(k)
                if t is not None and t.kind == _T_IDENT:
                    idents.append(t.text)
                    k += 1
                else:
                    break
            t = self.peek(k)
            if t is None or t.kind != _T_LBRACE or not idents:
                return
            lowered = [w.lower() for w in idents]
            is_class = "class" in lowered
            is_sm = (
                "sm" in lowered
                or "statemachine" in lowered
                or ("state" in lowered and "machine" in lowered)
            )
            if is_class and not seen_class:
                idx = lowered.index("class")
                if idx + 1 < len(idents):
                    self.machine_name = idents[idx + 1]
                self.pos += k + 1
                seen_class = True
                if is_sm:
                    return
                continue
            if is_sm:
                named = [w for w in idents if w.lower() not in _WRAPPER_WORDS]
                if named and not seen_class:
                    self.machine_name = named[-1]
                self.pos += k + 1
                return
            return

    def parse_state_or_skip(self, top_level: bool) -> Optional[_ProtoState]:
        tok = self.peek()
        assert tok is not None
        if tok.kind == _T_IDENT and (nxt := self.peek(1)) is not None and nxt.kind == _T_LBRACE:
            name = self.take().text
            self.take()  # lbrace
            return self.parse_state_body(name, tok.line)
        self.error(tok.line, f"expected a state definition, found {tok.text!r}")
        if self.failed:
            return None
        self.take()
        return None

    def looks_like_transition(self) -> bool:
        """An arrow appears before the next ';', '{' or '}'."""
        k = 0
        while True:
            t = self.peek(k)
            if t is None:
                return False
            if t.kind == _T_ARROW:
                return True
            if t.kind in (_T_SEMI, _T_LBRACE, _T_RBRACE):
                return False
            k += 1

    def parse_state_body(self, name: str, line: int) -> Optional[_ProtoState]:
        state = _ProtoState(name=name, line=line, chunks=[[]])
        while True:
            tok = self.peek()
            if tok is None:
                self.error(line, f"state {name!r} is missing its closing brace")
                break
            if tok.kind == _T_RBRACE:
                self.take()
                break
            if tok.kind == _T_PARALLEL:
                self.take()
                state.chunks.append([])
                continue
            if tok.kind == _T_IDENT and tok.text == "H" and not self.looks_like_transition():
                nxt = self.peek(1)
                if nxt is not None and nxt.kind == _T_LBRACE:
                    pass  # a state literally named H; fall through
                else:
                    self.take()
                    if (semi := self.peek()) is not None and semi.kind == _T_SEMI:
                        self.take()
                    state.has_history = True
                    continue
            if tok.kind == _T_IDENT and (nxt := self.peek(1)) is not None and nxt.kind == _T_LBRACE:
                child_name = self.take().text
                self.take()
                child = self.parse_state_body(child_name, tok.line)
                if self.failed:
                    return None
                if child is not None:
                    state.chunks[-1].append(child)
                continue
            if self.looks_like_transition():
                self.parse_transition(name)
                if self.failed:
                    return None
                continue
            self.error(tok.line, f"unexpected {tok.text!r} in state {name!r}")
            if self.failed:
                return None
            self.take()
        if self.failed:
            return None
        return state

    def parse_transition(self, source: str) -> None:
        start = self.peek()
        assert start is not None
        line = start.line
        event: Optional[str] = None
        guard: Optional[str] = None
        actions: tuple[str, ...] = ()

        tok = self.peek()
        if tok is not None and tok.kind == _T_IDENT:
            event = self.take().text
            tok = self.peek()
        if tok is not None and tok.kind == _T_GUARD:
            guard = self.take().text or None
            tok = self.peek()
        if tok is not None and tok.kind == _T_ACTIONS:
            raw = self.take().text
            actions = tuple(a.strip() for a in raw.split(";") if a.strip())
            tok = self.peek()
        if tok is None or tok.kind != _T_ARROW:
            self.error(line, "malformed transition: expected '->'")
            self.skip_to_boundary()
            return
        self.take()
        tok = self.peek()
        if tok is None or tok.kind != _T_IDENT:
            self.error(line, "malformed transition: missing target state")
            self.skip_to_boundary()
            return
        target = self.take().text
        tok = self.peek()
        if tok is not None and tok.kind == _T_SEMI:
            self.take()
        elif self.mode == STRICT:
            self.diags.append(ParseDiagnostic(line, "error", "transition is missing ';'"))
            self.failed = True
            return
        else:
            self.diags.append(ParseDiagnostic(line, "warning", "transition is missing ';'"))
        self.transitions.append(
            _ProtoTransition(source=source, target=target, event=event, guard=guard, actions=actions, line=line)
        )

    def skip_to_boundary(self) -> None:
        """Lenient recovery: drop tokens up to the next ';' or brace."""
        if self.failed:
            return
        while (tok := self.peek()) is not None:
            if tok.kind == _T_SEMI:
                self.take()
                return
            if tok.kind in (_T_RBRACE, _T_LBRACE):
                return
            self.take()


# ---------------------------------------------------------------------------
# Tree finishing


def _build_machine(parser: _Parser, mode: str, diags: list[ParseDiagnostic]) -> Optional[ir.StateMachine]:
    lenient = mode == LENIENT

    # Drop duplicate state names (whole subtree), keeping the first.
    seen: set[str] = set()

    def prune(states: list[_ProtoState]) -> list[_ProtoState]:
        kept = []
        for st in states:
            try:
                canon = ir.normalize_name(st.name)
            except ir.NameUnusable:
                diags.append(ParseDiagnostic(st.line, "warning", f"state {st.name!r} has no usable name; dropped"))
                continue
            if canon in seen:
                if lenient:
                    diags.append(
                        ParseDiagnostic(st.line, "warning", f"duplicate state {st.name!r} dropped")
                    )
                    continue
                kept.append(st)  # strict: keep; validation reports it
                continue
            seen.add(canon)
            st.chunks = [prune(chunk) for chunk in st.chunks]
            kept.append(st)
        return kept

    roots = prune(parser.roots)

    def freeze(st: _ProtoState) -> ir.StateNode:
        chunks = [c for c in st.chunks if c]
        if not chunks:
            if st.has_history and lenient:
                diags.append(
                    ParseDiagnostic(st.line, "warning", f"history marker on leaf state {st.name!r} dropped")
                )
                return ir.simple(st.name)
            node = ir.StateNode(name=st.name, kind=ir.SIMPLE, has_history=st.has_history)
            return node
        regions = [ir.region([freeze(s) for s in chunk]) for chunk in chunks]
        return ir.composite(st.name, regions, has_history=st.has_history)

    root_nodes = [freeze(st) for st in roots]

    canonicals = set(seen)
    transitions: list[ir.Transition] = []
    for pt in parser.transitions:
        try:
            src = ir.normalize_name(pt.source)
            tgt = ir.normalize_name(pt.target)
        except ir.NameUnusable:
            diags.append(ParseDiagnostic(pt.line, "warning", "transition endpoint name unusable; dropped"))
            continue
        if src not in canonicals or tgt not in canonicals:
            if lenient:
                missing = pt.target if tgt not in canonicals else pt.source
                diags.append(
                    ParseDiagnostic(pt.line, "warning", f"transition references unknown state {missing!r}; dropped")
                )
                continue
        transitions.append(
            ir.Transition(source=src, target=tgt, event=pt.event, guard=pt.guard, actions=pt.actions)
        )

    sm = ir.machine(parser.machine_name, root_nodes, transitions)
    violations = ir.validate(sm)
    if violations:
        if not lenient:
            for v in violations:
                diags.append(ParseDiagnostic(1, "error", str(v)))
            return None
        # Lenient output must stay valid: drop offending transitions, then
        # retry; structural problems beyond that give up to an empty machine.
        bad_rules = {"unknown-source", "unknown-target", "undeclared-event", "guard-unemittable", "action-unemittable", "empty-action"}
        if all(v.rule in bad_rules for v in violations):
            keep = []
            for t in sm.transitions:
                trial = ir.machine(sm.name, sm.root_states, [t])
                if not ir.validate(trial):
                    keep.append(t)
                else:
                    diags.append(ParseDiagnostic(1, "warning", f"invalid transition {t.source}->{t.target} dropped"))
            sm = ir.machine(sm.name, sm.root_states, keep)
            if not ir.validate(sm):
                return sm
        diags.append(ParseDiagnostic(1, "warning", "could not repair machine; returning empty machine"))
        return ir.machine("machine" if not _IDENT_RE.fullmatch(parser.machine_name) else parser.machine_name, [])
    return sm


def _strip_fences(text: str) -> str:
    blocks = _FENCE_RE.findall(text)
    if blocks:
        return "\n".join(blocks)
    return text


def parse_umple(text: str, mode: str = STRICT) -> UmpleDocument:
    """Parse the textual syntax into a machine.

    Strict mode raises :class:`ParseFailed` on the first grammar violation.
    Lenient mode never raises: fenced code blocks are unwrapped, prose and
    malformed entries are skipped with warnings, and the returned machine
    always passes validation (possibly with zero states).
    """
    if mode not in (STRICT, LENIENT):
        raise ValueError(f"unknown parse mode {mode!r}")
    diags: list[ParseDiagnostic] = []
    body = _strip_fences(text) if mode == LENIENT else text
    tokens = _tokenize(body, mode, diags)
    machine: Optional[ir.StateMachine] = None
    if not any(d.severity == "error" for d in diags):
        parser = _Parser(tokens, mode, diags)
        parser.parse_document()
        if not parser.failed:
            machine = _build_machine(parser, mode, diags)
    if mode == STRICT and (machine is None or any(d.severity == "error" for d in diags)):
        raise ParseFailed(diags)
    return UmpleDocument(source_text=text, machine=machine, diagnostics=diags)
