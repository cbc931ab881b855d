"""Line-oriented sectioned model files.

A model file declares the base box, the fiber (with its witness window and
grid), the signature with its interpretation expressions, and named sections,
connections and maps. Keys hold either plain scalars, interval lists like
`-2..2, -2..2`, or comma-separated quoted expressions. Errors carry line
numbers.

Variable conventions: base variables x1..xn; fiber variables y1..yk (lift
fields and, for arity-1 symbols, guards); argument components y{j}{i} for the
j-th argument of a relation or function; map components are written over the
source's x1..xd, with `t` accepted for x1 when the source is 1-dimensional.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .bundle import (BaseBox, FiberBundle, Section, SmoothMap, StructureBundle,
                     base_var_names, interpretation_var_names)
from .expr import ExprError, Var, parse_expr, substitute
from .logic import Signature
from .forcing import NeighborhoodPolicy
from .transport import Connection, TransportError


class ModelError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        where = f" (line {line})" if line else ""
        super().__init__(f"{message}{where}")
        self.line = line


@dataclass
class Model:
    path: str
    bundle: StructureBundle
    fiber_box: BaseBox
    fiber_grid: int
    sections: dict
    connections: dict
    maps: dict          # name -> SmoothMap
    map_boxes: dict     # name -> BaseBox (source box)

    def policy(self, **overrides) -> NeighborhoodPolicy:
        base = dict(fiber_lows=self.fiber_box.lows, fiber_highs=self.fiber_box.highs,
                    fiber_grid=self.fiber_grid)
        base.update(overrides)
        return NeighborhoodPolicy(**base)


def _split_quoted(value: str, line: int) -> list:
    """Split a comma-separated list of double-quoted strings."""
    parts = []
    i = 0
    while i < len(value):
        while i < len(value) and value[i] in " \t,":
            i += 1
        if i >= len(value):
            break
        if value[i] != '"':
            raise ModelError(f"expected a quoted expression, got {value[i:]!r}", line)
        j = value.index('"', i + 1) if '"' in value[i + 1:] else -1
        if j < 0:
            raise ModelError("unterminated quoted expression", line)
        parts.append(value[i + 1:j])
        i = j + 1
    if not parts:
        raise ModelError("expected at least one quoted expression", line)
    return parts


def _parse_intervals(value: str, line: int) -> tuple:
    lows, highs = [], []
    for chunk in value.split(","):
        chunk = chunk.strip()
        if ".." not in chunk:
            raise ModelError(f"expected lo..hi interval, got {chunk!r}", line)
        lo_text, hi_text = chunk.split("..", 1)
        try:
            lo, hi = float(lo_text), float(hi_text)
        except ValueError:
            raise ModelError(f"malformed interval {chunk!r}", line) from None
        lows.append(lo)
        highs.append(hi)
    return tuple(lows), tuple(highs)


def _sections_of(text: str) -> list:
    """[(header, header_line, {key: (value, line)})]."""
    out = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if line.lstrip().startswith("["):
            header = line.strip()
            if not header.endswith("]"):
                raise ModelError("unterminated section header", lineno)
            current = (header[1:-1].strip(), lineno, {})
            out.append(current)
            continue
        if current is None:
            raise ModelError("key outside any section", lineno)
        if "=" not in line:
            raise ModelError("expected `key = value`", lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if key in current[2]:
            raise ModelError(f"duplicate key '{key}'", lineno)
        current[2][key] = (value.strip(), lineno)
    return out


def _need(entries: dict, key: str, header_line: int):
    if key not in entries:
        raise ModelError(f"missing key '{key}'", header_line)
    return entries[key]


def _parse_expr_at(source: str, variables, line: int):
    try:
        return parse_expr(source, variables)
    except ExprError as exc:
        raise ModelError(f"bad expression: {exc}", line) from None


def load_model(path) -> Model:
    """Parse and validate a model file, resolving all cross-references."""
    path = Path(path)
    if not path.exists():
        raise ModelError(f"no such model file: {path}")
    sections = _sections_of(path.read_text())

    base_box = None
    fiber_dim = None
    fiber_box = None
    fiber_grid = 5
    relations, functions, constants = [], [], []
    guards, funcs, consts = {}, {}, {}
    named_sections, connections = {}, {}
    maps, map_boxes = {}, {}
    pending = []  # interpretation blocks parsed after dims are known

    for header, hline, entries in sections:
        kind, _, name = header.partition(" ")
        name = name.strip()
        if kind == "base":
            value, line = _need(entries, "box", hline)
            lows, highs = _parse_intervals(value, line)
            if "dim" in entries:
                dim_text, dim_line = entries["dim"]
                if int(dim_text) != len(lows):
                    raise ModelError("dim does not match the box", dim_line)
            base_box = BaseBox(lows, highs)
        elif kind == "fiber":
            value, line = _need(entries, "box", hline)
            lows, highs = _parse_intervals(value, line)
            fiber_box = BaseBox(lows, highs)
            fiber_dim = len(lows)
            if "dim" in entries:
                dim_text, dim_line = entries["dim"]
                if int(dim_text) != fiber_dim:
                    raise ModelError("dim does not match the box", dim_line)
            if "grid" in entries:
                fiber_grid = int(entries["grid"][0])
        elif kind in ("relation", "function", "constant", "section", "connection", "map"):
            if not name:
                raise ModelError(f"[{kind}] needs a name", hline)
            pending.append((kind, name, hline, entries))
        else:
            raise ModelError(f"unknown section kind '{kind}'", hline)

    if base_box is None:
        raise ModelError("missing [base] section")
    if fiber_box is None or fiber_dim is None:
        raise ModelError("missing [fiber] section")
    n, k = base_box.dim, fiber_dim

    for kind, name, hline, entries in pending:
        if kind == "relation":
            arity = int(_need(entries, "arity", hline)[0])
            guard_text, line = _need(entries, "guard", hline)
            exprs = _split_quoted(guard_text, line)
            if len(exprs) != 1:
                raise ModelError("a relation needs exactly one guard expression", line)
            relations.append((name, arity))
            guards[name] = _parse_expr_at(exprs[0], interpretation_var_names(n, k, arity), line)
        elif kind == "function":
            arity = int(_need(entries, "arity", hline)[0])
            functions.append((name, arity))
            comps = []
            for i in range(k):
                text, line = _need(entries, f"y{i + 1}", hline)
                exprs = _split_quoted(text, line)
                comps.append(_parse_expr_at(exprs[0], interpretation_var_names(n, k, arity), line))
            funcs[name] = tuple(comps)
        elif kind == "constant":
            constants.append(name)
            comps = []
            for i in range(k):
                text, line = _need(entries, f"y{i + 1}", hline)
                exprs = _split_quoted(text, line)
                comps.append(_parse_expr_at(exprs[0], base_var_names(n), line))
            consts[name] = tuple(comps)
        elif kind == "section":
            domain = base_box
            if "box" in entries:
                lows, highs = _parse_intervals(*entries["box"])
                domain = BaseBox(lows, highs)
            comps = []
            for i in range(k):
                text, line = _need(entries, f"y{i + 1}", hline)
                exprs = _split_quoted(text, line)
                comps.append(_parse_expr_at(exprs[0], base_var_names(n), line))
            named_sections[name] = Section(domain, tuple(comps))
        elif kind == "connection":
            rows = []
            lift_vars = base_var_names(n) + tuple(f"y{i + 1}" for i in range(k))
            for r in range(k):
                key = f"row{r + 1}"
                if key not in entries and k == 1 and "L" in entries:
                    key = "L"
                text, line = _need(entries, key, hline)
                exprs = _split_quoted(text, line)
                if len(exprs) != n:
                    raise ModelError(f"lift row needs {n} entries", line)
                rows.append(tuple(_parse_expr_at(e, lift_vars, line) for e in exprs))
            try:
                connections[name] = Connection(FiberBundle(base_box, k), tuple(rows))
            except TransportError as exc:
                raise ModelError(str(exc), hline) from None
        elif kind == "map":
            source_dim = int(_need(entries, "source", hline)[0])
            lows, highs = _parse_intervals(*_need(entries, "box", hline))
            if len(lows) != source_dim:
                raise ModelError("map box does not match the source dimension", hline)
            source_vars = list(base_var_names(source_dim))
            if source_dim == 1:
                source_vars.append("t")
            comps = []
            for i in range(n):
                text, line = _need(entries, f"x{i + 1}", hline)
                exprs = _split_quoted(text, line)
                e = _parse_expr_at(exprs[0], source_vars, line)
                if source_dim == 1:
                    e = substitute(e, {"t": Var("x1")})
                comps.append(e)
            maps[name] = SmoothMap(source_dim, n, tuple(comps))
            map_boxes[name] = BaseBox(lows, highs)

    signature = Signature(tuple(relations), tuple(functions), tuple(constants))
    bundle = StructureBundle(FiberBundle(base_box, k), signature, guards, funcs, consts)
    for name, sec in named_sections.items():
        if sec.fiber_dim != k:
            raise ModelError(f"section '{name}' has the wrong number of components")
    return Model(str(path), bundle, fiber_box, fiber_grid, named_sections,
                 connections, maps, map_boxes)
