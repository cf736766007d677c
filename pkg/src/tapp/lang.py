"""TAPP policy scripts: AST, parser, renderer, canonicalization, validation.

The concrete syntax is the indentation-based, YAML-looking notation used for
TAPP listings.  It is *not* parsed with a YAML library: ``*label`` selectors
and tag-level options written next to block items are not valid YAML, and a
closed grammar gives precise error locations.

Example::

    critical:
      - controller: LocalCtl_1
        workers:
          - *edge
        strategy: random
      followup: fail
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Union

__all__ = [
    "Strategy",
    "Tolerance",
    "Followup",
    "CapacityUsed",
    "MaxConcurrentInvocations",
    "Overload",
    "InvalidateRule",
    "ControllerClause",
    "NamedWorker",
    "WorkerSet",
    "WorkerClause",
    "Block",
    "TagPolicy",
    "AppScript",
    "ParseError",
    "Diagnostic",
    "KEYWORDS",
    "parse_script",
    "render_script",
    "canonicalize",
    "validate_script",
    "load_script",
]


class Strategy(str, enum.Enum):
    RANDOM = "random"
    PLATFORM = "platform"
    BEST_FIRST = "best_first"


class Tolerance(str, enum.Enum):
    ALL = "all"
    SAME = "same"
    NONE = "none"


class Followup(str, enum.Enum):
    DEFAULT = "default"
    FAIL = "fail"


@dataclass(frozen=True)
class CapacityUsed:
    percent: int

    def render(self) -> str:
        return f"capacity_used: {self.percent}%"


@dataclass(frozen=True)
class MaxConcurrentInvocations:
    n: int

    def render(self) -> str:
        return f"max_concurrent_invocations: {self.n}"


@dataclass(frozen=True)
class Overload:
    def render(self) -> str:
        return "overload"


InvalidateRule = Union[CapacityUsed, MaxConcurrentInvocations, Overload]

Loc = tuple  # (line, column), both 1-based


def _loc_field():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ControllerClause:
    label: str
    tolerance: Optional[Tolerance] = None
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class NamedWorker:
    label: str
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class WorkerSet:
    """``*`` selector, optionally scoped to the workers carrying ``scope``."""

    scope: Optional[str] = None
    strategy: Optional[Strategy] = None
    invalidate: Optional[InvalidateRule] = None
    loc: Optional[Loc] = _loc_field()


WorkerClause = Union[NamedWorker, WorkerSet]


@dataclass(frozen=True)
class Block:
    workers: tuple
    controller: Optional[ControllerClause] = None
    strategy: Optional[Strategy] = None
    invalidate: Optional[InvalidateRule] = None
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class TagPolicy:
    blocks: tuple
    strategy: Optional[Strategy] = None
    followup: Optional[Followup] = None
    loc: Optional[Loc] = _loc_field()
    # set only when ``followup`` was written in the source
    followup_loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class AppScript:
    tags: dict
    source_version: int = 0

    def __contains__(self, name: str) -> bool:
        return name in self.tags

    def __getitem__(self, name: str) -> TagPolicy:
        return self.tags[name]


class ParseError(Exception):
    """First error found in a TAPP script (parsing is fail-fast)."""

    def __init__(self, kind: str, line: int, column: int, message: str):
        super().__init__(f"{line}:{column}: {kind}: {message}")
        self.kind = kind
        self.line = line
        self.column = column
        self.message = message


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    severity: str  # "error" | "warning"
    line: int
    column: int
    message: str
    code: str = ""

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity}: {self.code}: {self.message}"


KEYWORDS = frozenset(
    {
        "controller", "topology_tolerance", "workers", "strategy", "invalidate",
        "followup", "capacity_used", "max_concurrent_invocations", "overload",
        "random", "platform", "best_first", "all", "same", "none", "default",
        "fail", "*",
    }
)
# keys that structure a script; never valid as tag names
_STRUCTURAL = frozenset(
    {"controller", "topology_tolerance", "workers", "strategy", "invalidate", "followup"}
)
_BLOCK_KEYS = ("controller", "topology_tolerance", "workers", "strategy", "invalidate")
_IDENT = re.compile(r"[A-Za-z0-9_-]+\Z")
_KEY_LINE = re.compile(r"([A-Za-z0-9_-]+):(?:\s+(.*))?\Z|([A-Za-z0-9_-]+):\Z")


# --------------------------------------------------------------------------
# lexing


@dataclass
class _Line:
    number: int
    indent: int  # 0-based column of the first character (the dash if any)
    dash: bool
    col: int  # 0-based column of the content after an optional dash
    key: Optional[str]
    value: Optional[str]
    value_col: int

    def at(self, col0: int) -> tuple:
        return self.number, col0 + 1


def _strip_comment(raw: str) -> str:
    for i, ch in enumerate(raw):
        if ch == "#" and (i == 0 or raw[i - 1] in " \t"):
            return raw[:i]
    return raw


def _lex(text: str) -> list:
    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        body = _strip_comment(raw).rstrip()
        if not body.strip():
            continue
        stripped = body.lstrip(" ")
        indent = len(body) - len(stripped)
        if stripped[0] in "\t\f\v" or "\t" in body[:indent]:
            raise ParseError("syntax", number, indent + 1, "tabs are not allowed in indentation")
        dash = False
        col = indent
        rest = stripped
        if rest == "-" or rest.startswith("- "):
            dash = True
            after = rest[1:]
            content = after.lstrip(" ")
            if not content:
                raise ParseError("syntax", number, indent + 1, "empty list item")
            col = indent + 1 + (len(after) - len(content))
            rest = content
        elif rest.startswith("-") and not rest[1:2].isalnum() and rest[1:2] not in ("_",):
            raise ParseError("syntax", number, indent + 1, "list items need a space after '-'")
        key = value = None
        value_col = col
        m = _KEY_LINE.match(rest)
        if m:
            key = m.group(1) or m.group(3)
            value = m.group(2)
            if value is not None:
                value = value.strip() or None
                value_col = col + rest.index(value, len(key) + 1) if value else col
        elif ":" in rest and not rest.startswith("*"):
            raise ParseError("syntax", number, col + 1, f"malformed key in {rest!r}")
        else:
            value = rest
        lines.append(_Line(number, indent, dash, col, key, value, value_col))
    return lines


# --------------------------------------------------------------------------
# parsing


def _ident(text: str, line: int, col: int, what: str) -> str:
    if not _IDENT.match(text):
        raise ParseError("bad-value", line, col, f"invalid {what} {text!r}")
    return text


def _enum(cls, text: Optional[str], ln: _Line, what: str):
    if text is None:
        raise ParseError("syntax", ln.number, ln.col + 1, f"missing value for '{ln.key}'")
    try:
        return cls(text)
    except ValueError:
        allowed = " | ".join(m.value for m in cls)
        raise ParseError(
            "unknown-keyword", ln.number, ln.value_col + 1, f"unknown {what} {text!r} (expected {allowed})"
        ) from None


_INV_KV = re.compile(r"(capacity_used|max_concurrent_invocations)\s*:\s*(\S.*)?\Z")


def _invalidate_value(text: str, line: int, col: int) -> InvalidateRule:
    if text == "overload":
        return Overload()
    m = _INV_KV.match(text)
    if not m:
        raise ParseError(
            "unknown-keyword",
            line,
            col,
            f"unknown invalidation {text!r} (expected capacity_used | max_concurrent_invocations | overload)",
        )
    name, arg = m.group(1), (m.group(2) or "").strip()
    arg_col = col + (text.index(arg, len(name)) if arg else len(text))
    if name == "capacity_used":
        pm = re.fullmatch(r"(\d+)%", arg)
        if not pm:
            raise ParseError("bad-value", line, arg_col, f"capacity_used expects an integer percentage like 50%, got {arg!r}")
        pct = int(pm.group(1))
        if not 1 <= pct <= 100:
            raise ParseError("bad-value", line, arg_col, f"capacity_used must be in 1%..100%, got {pct}%")
        return CapacityUsed(pct)
    if not re.fullmatch(r"\d+", arg):
        raise ParseError("bad-value", line, arg_col, f"max_concurrent_invocations expects a positive integer, got {arg!r}")
    n = int(arg)
    if n < 1:
        raise ParseError("bad-value", line, arg_col, "max_concurrent_invocations must be >= 1")
    return MaxConcurrentInvocations(n)


class _Parser:
    def __init__(self, text: str):
        self.lines = _lex(text)
        self.pos = 0

    @property
    def cur(self) -> Optional[_Line]:
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def script(self) -> AppScript:
        if not self.lines:
            raise ParseError("syntax", 1, 1, "a script needs at least one policy tag")
        base = self.lines[0].indent
        tags: dict = {}
        while self.cur is not None:
            ln = self.cur
            if ln.indent != base:
                raise ParseError("syntax", ln.number, ln.indent + 1, "unexpected indentation")
            if ln.dash or ln.key is None:
                raise ParseError("syntax", ln.number, ln.indent + 1, "expected a policy tag ('name:')")
            name = ln.key
            if name in _STRUCTURAL:
                raise ParseError("syntax", ln.number, ln.col + 1, f"'{name}' cannot be used as a policy tag name")
            if ln.value is not None:
                if ln.value == "[]":
                    raise ParseError("semantic", ln.number, ln.value_col + 1, f"tag '{name}' has an empty block list")
                raise ParseError("syntax", ln.number, ln.value_col + 1, "a policy tag must be followed by an indented block list")
            if name in tags:
                raise ParseError("semantic", ln.number, ln.col + 1, f"duplicate policy tag '{name}'")
            self.pos += 1
            tags[name] = self.tag(base, ln)
        return AppScript(tags)

    def tag(self, base: int, header: _Line) -> TagPolicy:
        blocks = []
        strategy = followup = None
        followup_loc = None
        body = None
        seen = set()
        # blocks may sit level with the tag key, as YAML allows for sequences
        while self.cur is not None and (self.cur.indent > base or (self.cur.dash and self.cur.indent == base)):
            ln = self.cur
            if body is None:
                body = ln.indent
            elif ln.indent != body:
                raise ParseError("syntax", ln.number, ln.indent + 1, "unexpected indentation")
            if ln.dash:
                blocks.append(self.block(ln))
                continue
            if ln.key is None:
                raise ParseError("syntax", ln.number, ln.col + 1, "expected a block ('- ...') or a tag option")
            if ln.key in seen:
                raise ParseError("syntax", ln.number, ln.col + 1, f"duplicate option '{ln.key}'")
            if ln.key == "strategy":
                strategy = _enum(Strategy, ln.value, ln, "strategy")
            elif ln.key == "followup":
                followup = _enum(Followup, ln.value, ln, "followup")
                followup_loc = ln.at(ln.col)
            elif ln.key in _BLOCK_KEYS:
                raise ParseError("syntax", ln.number, ln.col + 1, f"'{ln.key}' belongs inside a block (start the block with '-')")
            else:
                raise ParseError("unknown-keyword", ln.number, ln.col + 1, f"unknown tag option '{ln.key}'")
            seen.add(ln.key)
            self.pos += 1
        if not blocks:
            raise ParseError("semantic", header.number, header.col + 1, f"tag '{header.key}' has no blocks")
        return TagPolicy(tuple(blocks), strategy, followup, loc=header.at(header.col), followup_loc=followup_loc)

    def block(self, first: _Line) -> Block:
        c = first.col
        if first.key is None:
            raise ParseError("syntax", first.number, c + 1, "a block must start with a 'key: value' entry")
        fields: dict = {}
        ln = first
        while True:
            key = ln.key
            if key in fields:
                raise ParseError("syntax", ln.number, ln.col + 1, f"duplicate block entry '{key}'")
            if key not in _BLOCK_KEYS:
                if key in ("followup",):
                    raise ParseError("syntax", ln.number, ln.col + 1, "'followup' is a tag option, not a block entry")
                raise ParseError("unknown-keyword", ln.number, ln.col + 1, f"unknown block entry '{key}'")
            self.pos += 1
            if key == "controller":
                if ln.value is None:
                    raise ParseError("syntax", ln.number, ln.col + 1, "missing controller label")
                fields[key] = (_ident(ln.value, ln.number, ln.value_col + 1, "controller label"), ln.at(ln.value_col))
            elif key == "topology_tolerance":
                fields[key] = (_enum(Tolerance, ln.value, ln, "topology_tolerance"), ln.at(ln.col))
            elif key == "strategy":
                fields[key] = _enum(Strategy, ln.value, ln, "strategy")
            elif key == "invalidate":
                fields[key] = self.invalidate(ln)
            else:
                fields[key] = self.workers(ln, c)
            nxt = self.cur
            if nxt is None or nxt.indent < c:
                break
            if nxt.indent > c:
                raise ParseError("syntax", nxt.number, nxt.indent + 1, "unexpected indentation")
            if nxt.dash:
                raise ParseError("syntax", nxt.number, nxt.indent + 1, "unexpected list item")
            if nxt.key is None:
                raise ParseError("syntax", nxt.number, nxt.col + 1, "expected a block entry ('key: value')")
            ln = nxt
        if "workers" not in fields:
            raise ParseError("semantic", first.number, c + 1, "block has no 'workers' entry")
        controller = None
        if "controller" in fields:
            label, loc = fields["controller"]
            tol = fields.get("topology_tolerance", (None, None))[0]
            controller = ControllerClause(label, tol, loc=loc)
        elif "topology_tolerance" in fields:
            _, (line, col) = fields["topology_tolerance"]
            raise ParseError("semantic", line, col, "topology_tolerance requires a controller entry")
        return Block(
            fields["workers"],
            controller,
            fields.get("strategy"),
            fields.get("invalidate"),
            loc=first.at(first.indent),
        )

    def invalidate(self, ln: _Line) -> InvalidateRule:
        if ln.value is not None:
            return _invalidate_value(ln.value, ln.number, ln.value_col + 1)
        child = self.cur
        if child is None or child.indent <= ln.col or child.dash:
            raise ParseError("syntax", ln.number, ln.col + 1, "missing invalidation rule")
        self.pos += 1
        text = child.value if child.key is None else f"{child.key}: {child.value or ''}".rstrip()
        rule = _invalidate_value(text, child.number, child.col + 1)
        after = self.cur
        if after is not None and after.indent > ln.col and after.indent >= child.indent:
            raise ParseError("syntax", after.number, after.indent + 1, "only one invalidation rule is allowed")
        return rule

    def workers(self, ln: _Line, c: int) -> tuple:
        if ln.value is not None:
            if re.fullmatch(r"\[\s*\]", ln.value):
                raise ParseError("semantic", ln.number, ln.value_col + 1, "empty worker list")
            raise ParseError("syntax", ln.number, ln.value_col + 1, "worker list must be written as indented '- ' items")
        first = self.cur
        if first is None or not first.dash or first.indent < c:
            raise ParseError("semantic", ln.number, ln.col + 1, "empty worker list")
        d = first.indent
        items = []
        while self.cur is not None and self.cur.dash and self.cur.indent == d:
            items.append(self.worker_item(self.cur))
        kinds = {type(w) for w in items}
        if len(kinds) > 1:
            w = next(x for x in items if type(x) is not type(items[0]))
            raise ParseError("syntax", w.loc[0], w.loc[1], "a worker list mixes labels and '*' selectors")
        return tuple(items)

    def worker_item(self, ln: _Line) -> WorkerClause:
        if ln.key is not None:
            raise ParseError("syntax", ln.number, ln.col + 1, "expected a worker label or a '*' selector")
        text = ln.value
        loc = ln.at(ln.col)
        self.pos += 1
        if text.startswith("*"):
            scope = text[1:] or None
            if scope is not None:
                _ident(scope, ln.number, ln.col + 2, "worker-set label")
            strategy = invalidate = None
        else:
            _ident(text, ln.number, ln.col + 1, "worker label")
        seen = set()
        opts_indent = None
        while self.cur is not None and self.cur.indent > ln.indent:
            o = self.cur
            if opts_indent is None:
                opts_indent = o.indent
            elif o.indent != opts_indent:
                raise ParseError("syntax", o.number, o.indent + 1, "unexpected indentation")
            if o.dash or o.key is None:
                raise ParseError("syntax", o.number, o.indent + 1, "expected a worker-set option")
            if not text.startswith("*"):
                raise ParseError("syntax", o.number, o.col + 1, "options are only allowed on '*' worker sets")
            if o.key in seen:
                raise ParseError("syntax", o.number, o.col + 1, f"duplicate option '{o.key}'")
            seen.add(o.key)
            if o.key == "strategy":
                self.pos += 1
                strategy = _enum(Strategy, o.value, o, "strategy")
            elif o.key == "invalidate":
                self.pos += 1
                invalidate = self.invalidate(o)
            else:
                raise ParseError("unknown-keyword", o.number, o.col + 1, f"unknown worker-set option '{o.key}'")
        if text.startswith("*"):
            return WorkerSet(scope, strategy, invalidate, loc=loc)
        return NamedWorker(text, loc=loc)


def parse_script(text: str) -> AppScript:
    """Parse TAPP source into an AST with omitted options left as ``None``.

    Raises :class:`ParseError` on the first syntax or grammar error.
    """
    return _Parser(text).script()


def load_script(path) -> AppScript:
    """Read, parse and canonicalize a ``.tapp.yml`` file."""
    with open(path, encoding="utf-8") as fh:
        return canonicalize(parse_script(fh.read()))


# --------------------------------------------------------------------------
# rendering


def _render_set(w: WorkerSet, pad: str) -> list:
    out = [f"{pad}- *{w.scope or ''}"]
    if w.strategy is not None:
        out.append(f"{pad}  strategy: {w.strategy.value}")
    if w.invalidate is not None:
        out.append(f"{pad}  invalidate: {w.invalidate.render()}")
    return out


def render_script(script: AppScript) -> str:
    """Render an AST back to TAPP source; ``parse_script`` inverts it."""
    out = []
    for name, tag in script.tags.items():
        out.append(f"{name}:")
        for block in tag.blocks:
            entries = []
            if block.controller is not None:
                entries.append([f"controller: {block.controller.label}"])
                if block.controller.tolerance is not None:
                    entries.append([f"topology_tolerance: {block.controller.tolerance.value}"])
            items = ["workers:"]
            for w in block.workers:
                if isinstance(w, NamedWorker):
                    items.append(f"  - {w.label}")
                else:
                    items.extend(_render_set(w, "  "))
            entries.append(items)
            if block.strategy is not None:
                entries.append([f"strategy: {block.strategy.value}"])
            if block.invalidate is not None:
                entries.append([f"invalidate: {block.invalidate.render()}"])
            for i, entry in enumerate(entries):
                lead = "  - " if i == 0 else "    "
                out.append(lead + entry[0])
                out.extend("    " + rest for rest in entry[1:])
        if tag.strategy is not None:
            out.append(f"  strategy: {tag.strategy.value}")
        if tag.followup is not None:
            out.append(f"  followup: {tag.followup.value}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# canonicalization and validation


def canonicalize(script: AppScript) -> AppScript:
    """Fill every omitted option with its default; idempotent.

    Strategies default to ``best_first``, tolerances to ``all``, followups to
    ``default``; ``*`` sets inherit the enclosing block's strategy and
    invalidation rule when they omit them.
    """
    tags = {}
    for name, tag in script.tags.items():
        blocks = []
        for b in tag.blocks:
            strategy = b.strategy or Strategy.BEST_FIRST
            workers = tuple(
                replace(
                    w,
                    strategy=w.strategy or strategy,
                    invalidate=w.invalidate if w.invalidate is not None else b.invalidate,
                )
                if isinstance(w, WorkerSet)
                else w
                for w in b.workers
            )
            ctl = b.controller
            if ctl is not None and ctl.tolerance is None:
                ctl = replace(ctl, tolerance=Tolerance.ALL)
            blocks.append(replace(b, workers=workers, controller=ctl, strategy=strategy))
        tags[name] = replace(
            tag,
            blocks=tuple(blocks),
            strategy=tag.strategy or Strategy.BEST_FIRST,
            followup=tag.followup or Followup.DEFAULT,
        )
    return AppScript(tags, script.source_version)


def _pos(loc, fallback=(1, 1)):
    return loc if loc is not None else fallback


def validate_script(script: AppScript, topology=None) -> list:
    """Collect every static diagnostic of a canonicalized script.

    ``topology`` may be a ``ClusterTopology`` or a ``TopologySnapshot``; with
    it, controller labels, worker labels and set scopes are checked to
    resolve to at least one node.
    """
    diags = []
    has_default = "default" in script.tags
    for name, tag in script.tags.items():
        line, col = _pos(tag.loc)
        if name == "default" and tag.followup is Followup.DEFAULT and tag.followup_loc is not None:
            fl, fc = tag.followup_loc
            diags.append(
                Diagnostic("semantic", "warning", fl, fc, "the default tag names itself as followup", "self-reference")
            )
        if name != "default" and tag.followup in (Followup.DEFAULT, None) and not has_default:
            diags.append(
                Diagnostic(
                    "semantic", "warning", line, col,
                    f"tag '{name}' falls back to the default tag, but the script has none",
                    "missing-default",
                )
            )
        if topology is None:
            continue
        for block in tag.blocks:
            if block.controller is not None and not topology.controllers_with_label(block.controller.label):
                cl, cc = _pos(block.controller.loc, (line, col))
                diags.append(
                    Diagnostic(
                        "semantic", "error", cl, cc,
                        f"controller label '{block.controller.label}' matches no controller",
                        "unresolved-label",
                    )
                )
            for w in block.workers:
                label = w.label if isinstance(w, NamedWorker) else w.scope
                if label is None or topology.workers_with_label(label):
                    continue
                wl, wc = _pos(w.loc, (line, col))
                what = "worker label" if isinstance(w, NamedWorker) else "worker-set scope"
                diags.append(
                    Diagnostic("semantic", "error", wl, wc, f"{what} '{label}' matches no worker", "unresolved-label")
                )
    return diags


def errors(diagnostics: Iterable[Diagnostic]) -> list:
    return [d for d in diagnostics if d.severity == "error"]
