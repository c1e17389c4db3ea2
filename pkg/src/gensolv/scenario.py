"""Scenario files: a TOML-compatible key/value format with sections.

The reader supports the subset the toolkit documents: comments, bare keys,
strings, numbers, booleans, homogeneous/nested arrays, [tables],
[dotted.tables] and [[arrays of tables]].  Errors carry line positions.
(Python 3.10 has no stdlib TOML reader and the build environment ships
none, so the subset is parsed here.)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import bptype, symbols, varsym
from .errors import ParseError
from .grids import GridField, NetField, TorusGrid
from .nets import EpsGrid, GenNumber

_BARE_KEY = re.compile(r"^[A-Za-z0-9_-]+$")

KNOWN_TASKS = (
    "classify",
    "compare",
    "ellipticity",
    "fundsol",
    "solve-bp",
    "parametrix",
    "sobolev-check",
    "solve-weak",
)


# -- TOML-subset reader ---------------------------------------------------


def _parse_value(text, line_no):
    text = text.strip()
    if not text:
        raise ParseError("missing value", line=line_no)
    if text.startswith('"'):
        if not text.endswith('"') or len(text) < 2:
            raise ParseError("unterminated string", line=line_no)
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    if text.startswith("["):
        return _parse_array(text, line_no)
    try:
        if re.fullmatch(r"[+-]?\d+", text):
            return int(text)
        return float(text)
    except ValueError:
        raise ParseError(f"cannot parse value {text!r}", line=line_no) from None


def _split_top_level(text, line_no):
    """Split a bracketed array body on top-level commas."""
    parts, depth, start, in_str = [], 0, 0, False
    for i, ch in enumerate(text):
        if ch == '"':
            in_str = not in_str
        if in_str:
            continue
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise ParseError("unbalanced ']'", line=line_no)
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    if depth != 0:
        raise ParseError("unbalanced '['", line=line_no)
    parts.append(text[start:])
    return [p for p in (q.strip() for q in parts) if p]


def _parse_array(text, line_no):
    if not text.endswith("]"):
        raise ParseError("unterminated array", line=line_no)
    return [_parse_value(p, line_no) for p in _split_top_level(text[1:-1], line_no)]


def _descend(root, path, line_no, create_list=False):
    node = root
    for j, part in enumerate(path):
        if not _BARE_KEY.match(part):
            raise ParseError(f"bad table name {part!r}", line=line_no)
        last = j == len(path) - 1
        if last and create_list:
            node = node.setdefault(part, [])
            if not isinstance(node, list):
                raise ParseError(
                    f"table {part!r} redefined as array of tables", line=line_no
                )
            node.append({})
            return node[-1]
        nxt = node.setdefault(part, {})
        if isinstance(nxt, list):
            nxt = nxt[-1]
        if not isinstance(nxt, dict):
            raise ParseError(f"key {part!r} already holds a value", line=line_no)
        node = nxt
    return node


def loads(text):
    """Parse scenario text into nested dicts/lists.

    A side table of key line numbers is attached under "__key_lines__" so
    semantic errors downstream can still point at the offending line."""
    root = {}
    current = root
    cur_path = ()
    key_lines = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[["):
            if not line.endswith("]]"):
                raise ParseError("unterminated table header", line=line_no)
            path = [p.strip() for p in line[2:-2].split(".")]
            current = _descend(root, path, line_no, create_list=True)
            cur_path = tuple(path)
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("unterminated table header", line=line_no)
            path = [p.strip() for p in line[1:-1].split(".")]
            current = _descend(root, path, line_no)
            cur_path = tuple(path)
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line=line_no)
        key, _, val = line.partition("=")
        key = key.strip()
        if not _BARE_KEY.match(key):
            raise ParseError(f"bad key {key!r}", line=line_no)
        # strip trailing comments outside strings
        body, in_str = [], False
        for ch in val:
            if ch == '"':
                in_str = not in_str
            if ch == "#" and not in_str:
                break
            body.append(ch)
        current[key] = _parse_value("".join(body), line_no)
        key_lines[cur_path + (key,)] = line_no
    root["__key_lines__"] = key_lines
    return root


def load(path):
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


# -- scenario model --------------------------------------------------------


@dataclass
class Scenario:
    """Parsed scenario: eps grid, torus grid, named objects, task list."""

    eps: EpsGrid
    grid: TorusGrid
    seed: int
    tasks: list
    raw: dict
    nets: dict = field(default_factory=dict)  # name -> GenNumber
    symbols: dict = field(default_factory=dict)  # name -> ConstSymbol
    var_symbols: dict = field(default_factory=dict)  # name -> (DiffVarSymbol, profile cfg)
    operator: object = None  # BPOperator or None
    rhs: object = None  # NetField or None
    solver: dict = field(default_factory=dict)
    task_config: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)


def _build_eps(cfg):
    if cfg is None:
        return EpsGrid.default()
    if "values" in cfg:
        return EpsGrid(np.asarray(cfg["values"], dtype=float))
    k_max = int(cfg.get("k_max", 24))
    return EpsGrid.default(k_max=k_max)


def _build_grid(cfg):
    if cfg is None:
        return TorusGrid(dim=2, n_points=64, period=8 * np.pi)
    return TorusGrid(
        dim=int(cfg.get("dim", 2)),
        n_points=int(cfg.get("points", 64)),
        period=float(cfg.get("period", 8 * np.pi)),
    )


def _build_const_symbol(cfg, eps, name, line=None):
    try:
        dim = int(cfg["dim"])
        entries = [(tuple(int(a) for a in alpha), spec) for alpha, spec in cfg["coeffs"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"symbol {name!r}: bad coeffs block ({exc})", line=line) from None
    for alpha, _ in entries:
        if len(alpha) != dim or any(a < 0 for a in alpha):
            raise ParseError(
                f"symbol {name!r}: malformed multi-index {list(alpha)}", line=line
            )
    return symbols.ConstSymbol.from_expressions(dim, entries, eps)


def _build_net(cfg, eps, name):
    if "expr" in cfg:
        return GenNumber.from_expression(cfg["expr"], eps)
    if "samples" in cfg:
        vals = [complex(v[0], v[1]) if isinstance(v, list) else complex(v) for v in cfg["samples"]]
        return GenNumber(eps, np.asarray(vals))
    raise ParseError(f"net {name!r} needs 'expr' or 'samples'")


def _build_var_symbol(cfg, name):
    try:
        dim = int(cfg["dim"])
        entries = [
            (tuple(int(a) for a in alpha), text) for alpha, text in cfg["coeffs"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"varsymbol {name!r}: bad coeffs block ({exc})") from None
    sym = varsym.DiffVarSymbol.from_expressions(dim, entries)
    return sym, cfg.get("profile")


def _build_operator(cfg, eps, const_symbols):
    p0_name = cfg.get("p0")
    if p0_name not in const_symbols:
        raise ParseError(f"operator references unknown symbol {p0_name!r}")
    p0 = const_symbols[p0_name]
    x0 = np.asarray(cfg.get("x0", [0.0] * p0.dim), dtype=float)
    radius = float(cfg.get("radius", 2.0))
    terms = []
    for pert in cfg.get("perturbation", []):
        alpha = tuple(int(a) for a in pert["alpha"])
        cf = bptype.CoeffField.from_expression(pert["coeff"], p0.dim)
        if "symbol" in pert:
            Pj = const_symbols[pert["symbol"]]
        else:
            Pj = symbols.ConstSymbol.monomial(alpha, grid=eps)
        terms.append((cf, Pj))
    return bptype.BPOperator(p0=p0, terms=terms, x0=x0, radius=radius, eps=eps)


def _build_rhs(cfg, grid, eps):
    if cfg is None:
        return None
    expr = cfg.get("expr")
    if expr is None:
        raise ParseError("rhs block needs 'expr'")
    cf = bptype.CoeffField.from_expression(expr, grid.dim)
    return NetField(grid, eps, cf.values_on(grid, eps))


def from_dict(doc):
    """Build a Scenario from the parsed document."""
    key_lines = doc.pop("__key_lines__", {})
    eps = _build_eps(doc.get("eps"))
    grid = _build_grid(doc.get("grid"))
    seed = int(doc.get("seed", {}).get("value", 0))
    tasks_cfg = doc.get("tasks", {})
    tasks = list(tasks_cfg.get("list", []))
    for t in tasks:
        if t not in KNOWN_TASKS:
            raise ParseError(f"unknown task {t!r}; known: {', '.join(KNOWN_TASKS)}")
    sc = Scenario(eps=eps, grid=grid, seed=seed, tasks=tasks, raw=doc)
    for name, cfg in doc.get("symbols", {}).items():
        sc.symbols[name] = _build_const_symbol(
            cfg, eps, name, line=key_lines.get(("symbols", name, "coeffs"))
        )
    nets_cfg = doc.get("nets", {})
    if not isinstance(nets_cfg, dict):
        raise ParseError("nets must be a table of named nets, e.g. [nets.u1]")
    for name, cfg in nets_cfg.items():
        sc.nets[name] = _build_net(cfg, eps, name)
    for name, cfg in doc.get("varsymbols", {}).items():
        sc.var_symbols[name] = _build_var_symbol(cfg, name)
    if "operator" in doc:
        sc.operator = _build_operator(doc["operator"], eps, sc.symbols)
    sc.rhs = _build_rhs(doc.get("rhs"), grid, eps)
    sc.solver = doc.get("solver", {})
    sc.expect = doc.get("expect", {})
    for t in KNOWN_TASKS:
        if t in doc:
            sc.task_config[t] = doc[t]
    return sc


def load_scenario(path):
    return from_dict(load(path))
