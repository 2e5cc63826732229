"""Scenario files: the JSON format the CLI and the service both consume.

A scenario has blocks "grid", "cost", "penalty", "cone", "solver" and an
optional "sequence" for convergence schedules.  Validation is strict:
the schema rejects unknown keys, all numbers must be finite, and the
cost grammar is a small total expression language over the path
coordinates (x0, x1, ... or x0_1 for multi-asset grids) with
+ - * / ^, max, min, abs and call(x, k) = max(x - k, 0).
"""

from __future__ import annotations

import json
import math

import jsonschema
import numpy as np

from . import lattice, penalties, valuation
from .lattice import ConeSpec, MarketGrid
from .penalties import (
    DivergenceSum,
    FixedMarginals,
    MarketPrice,
    OptionQuote,
    WassersteinBall,
    loss,
)
from .solver import SolverOptions

CONE_TAGS = (
    lattice.MARTINGALE,
    lattice.EPS_MARTINGALE,
    lattice.NO_SHORT_SELLING,
    lattice.NO_LONG_BUYING,
    lattice.NULL_CONE,
)
UTILITY_NAMES = (
    "linear",
    "exponential",
    "piecewise_linear",
    "log",
    "hyperbolic",
    "truncated_exponential",
)
LOSS_KINDS = ("zero", "power", "threshold", "hard")
PENALTY_FAMILIES = ("fixed_marginals", "divergence", "market_price", "wasserstein_ball")
SEQUENCE_KINDS = ("utility_scaling", "eps_martingale", "wasserstein_radius")


class ScenarioError(ValueError):
    """Schema / grammar violation; carries human-readable diagnostics."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.line = line
        self.column = column


_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_UTILITY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {"name": {"enum": list(UTILITY_NAMES)}, "param": _NUM},
}
_LOSS = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {"kind": {"enum": list(LOSS_KINDS)}, "p": _NUM, "eps": _NUM},
}
_QUOTE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["price", "loss"],
    "properties": {
        "payoff": _VEC,
        "payoff_expression": {"type": "string"},
        "price": _NUM,
        "loss": _LOSS,
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["grid", "cost", "penalty", "cone"],
    "properties": {
        "name": {"type": "string"},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["nodes"],
            "properties": {
                # nodes[t][j] = sorted node list of asset j at time t
                "nodes": {
                    "type": "array",
                    "minItems": 2,
                    "items": {"type": "array", "minItems": 1, "items": _VEC},
                }
            },
        },
        "cost": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"expression": {"type": "string"}, "table": _VEC},
            "oneOf": [{"required": ["expression"]}, {"required": ["table"]}],
        },
        "penalty": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": list(PENALTY_FAMILIES)},
                "targets": {"type": "array", "items": _VEC},
                "utilities": {"type": "array", "items": _UTILITY},
                "references": {"type": "array", "items": _VEC},
                "quotes": {
                    "type": "array",
                    "items": {"type": "array", "items": _QUOTE},
                },
                "losses": {"type": "array", "items": _LOSS},
            },
        },
        "cone": {
            "type": "object",
            "additionalProperties": False,
            "required": ["tag"],
            "properties": {"tag": {"enum": list(CONE_TAGS)}, "eps": _NUM},
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "backend": {"enum": ["auto", "lp", "fw", "oracle"]},
                "tol": _NUM,
                "max_iter": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "sequence": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": list(SEQUENCE_KINDS)},
                "indices": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "eps_values": _VEC,
                "radii": _VEC,
                "limit_value": _NUM,
            },
        },
    },
}


# --- cost expression grammar ----------------------------------------------------


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tokens = []
        self._scan()
        self.i = 0

    def _scan(self):
        t, n = self.text, len(self.text)
        i = 0
        while i < n:
            ch = t[i]
            if ch.isspace():
                i += 1
                continue
            if ch in "+-*/^(),":
                self.tokens.append((ch, ch, i))
                i += 1
                continue
            if ch.isdigit() or ch == ".":
                j = i
                while j < n and (t[j].isdigit() or t[j] in ".eE" or (
                    t[j] in "+-" and j > i and t[j - 1] in "eE"
                )):
                    j += 1
                try:
                    val = float(t[i:j])
                except ValueError:
                    raise ScenarioError(f"bad number at column {i + 1}", column=i + 1)
                self.tokens.append(("num", val, i))
                i = j
                continue
            if ch.isalpha() or ch == "_":
                j = i
                while j < n and (t[j].isalnum() or t[j] == "_"):
                    j += 1
                self.tokens.append(("name", t[i:j], i))
                i = j
                continue
            raise ScenarioError(f"unexpected character {ch!r} at column {i + 1}", column=i + 1)
        self.tokens.append(("end", None, n))

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok


_FUNCS = {"max": 2, "min": 2, "abs": 1, "call": 2}


class _Parser:
    """Recursive descent over: expr = term (+|- term)*, term = factor
    ((*|/) factor)*, factor = unary (^ factor)?, unary = -unary | atom."""

    def __init__(self, text: str, variables: dict):
        self.tz = _Tokenizer(text)
        self.vars = variables

    def parse(self):
        node = self.expr()
        kind, _, pos = self.tz.peek()
        if kind != "end":
            raise ScenarioError(f"trailing input at column {pos + 1}", column=pos + 1)
        return node

    def expr(self):
        node = self.term()
        while self.tz.peek()[0] in ("+", "-"):
            op = self.tz.next()[0]
            rhs = self.term()
            node = node + rhs if op == "+" else node - rhs
        return node

    def term(self):
        node = self.factor()
        while self.tz.peek()[0] in ("*", "/"):
            op = self.tz.next()[0]
            rhs = self.factor()
            node = node * rhs if op == "*" else node / rhs
        return node

    def factor(self):
        base = self.unary()
        if self.tz.peek()[0] == "^":
            self.tz.next()
            exponent = self.factor()  # right associative
            return np.power(base, exponent)
        return base

    def unary(self):
        if self.tz.peek()[0] == "-":
            self.tz.next()
            return -self.unary()
        return self.atom()

    def atom(self):
        kind, val, pos = self.tz.next()
        if kind == "num":
            return np.asarray(val, dtype=float)
        if kind == "(":
            node = self.expr()
            k, _, p = self.tz.next()
            if k != ")":
                raise ScenarioError(f"expected ')' at column {p + 1}", column=p + 1)
            return node
        if kind == "name":
            if val in _FUNCS:
                k, _, p = self.tz.next()
                if k != "(":
                    raise ScenarioError(
                        f"{val} needs parentheses at column {p + 1}", column=p + 1
                    )
                args = [self.expr()]
                while self.tz.peek()[0] == ",":
                    self.tz.next()
                    args.append(self.expr())
                k, _, p = self.tz.next()
                if k != ")":
                    raise ScenarioError(f"expected ')' at column {p + 1}", column=p + 1)
                if len(args) != _FUNCS[val]:
                    raise ScenarioError(
                        f"{val} takes {_FUNCS[val]} argument(s)", column=pos + 1
                    )
                if val == "max":
                    return np.maximum(args[0], args[1])
                if val == "min":
                    return np.minimum(args[0], args[1])
                if val == "abs":
                    return np.abs(args[0])
                return np.maximum(args[0] - args[1], 0.0)  # call
            if val in self.vars:
                return self.vars[val]
            raise ScenarioError(
                f"unknown name {val!r} at column {pos + 1}", column=pos + 1
            )
        raise ScenarioError(f"unexpected token at column {pos + 1}", column=pos + 1)


def path_variables(grid: MarketGrid) -> dict:
    """Coordinate arrays per path: x{t}_{j}, with x{t} aliasing asset 0."""
    out = {}
    for t in range(grid.horizon + 1):
        for j in range(grid.num_assets):
            arr = grid.path_values[:, t, j]
            out[f"x{t}_{j}"] = arr
            if j == 0:
                out[f"x{t}"] = arr
    return out


def evaluate_cost_expression(grid: MarketGrid, text: str) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        result = _Parser(text, path_variables(grid)).parse()
    arr = np.broadcast_to(np.asarray(result, dtype=float), (grid.n_paths,)).copy()
    if np.any(np.isnan(arr)):
        raise ScenarioError("cost expression produced NaN")
    return arr


def _node_payoff(grid: MarketGrid, t: int, text: str) -> np.ndarray:
    """Evaluate a payoff expression on the time-t joint nodes (d = 1)."""
    if grid.num_assets != 1:
        raise ScenarioError("payoff expressions support single-asset grids")
    nodes = grid.nodes[t][0]
    res = _Parser(text, {f"x{t}": nodes, f"x{t}_0": nodes, "x": nodes}).parse()
    return np.broadcast_to(np.asarray(res, dtype=float), nodes.shape).copy()


# --- validation and building -----------------------------------------------------


def validate_dict(doc: dict) -> list:
    """Schema check; returns a list of human-readable error strings."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        errors.append(f"{where}: {err.message}")
    if not errors:
        errors.extend(_finite_check(doc, ""))
    return errors


def _finite_check(node, path):
    out = []
    if isinstance(node, dict):
        for k, v in node.items():
            out.extend(_finite_check(v, f"{path}/{k}"))
    elif isinstance(node, list):
        for i, v in enumerate(node):
            out.extend(_finite_check(v, f"{path}/{i}"))
    elif isinstance(node, float) and not math.isfinite(node):
        out.append(f"{path or '<root>'}: non-finite number")
    return out


def loads(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(
            f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}",
            line=e.lineno,
            column=e.colno,
        )
    errors = validate_dict(doc)
    if errors:
        raise ScenarioError("schema violations:\n  " + "\n  ".join(errors))
    return doc


def load_file(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def _build_utility(block: dict):
    return valuation.utility(block["name"], block.get("param"))


def _build_loss(block: dict):
    return loss(block["kind"], p=block.get("p"), eps=block.get("eps"))


def build_grid(doc: dict) -> MarketGrid:
    nodes = [
        [np.asarray(asset, dtype=float) for asset in per_t]
        for per_t in doc["grid"]["nodes"]
    ]
    return MarketGrid(nodes)


def build_cost(doc: dict, grid: MarketGrid) -> np.ndarray:
    block = doc["cost"]
    if "table" in block:
        arr = np.asarray(block["table"], dtype=float)
        if arr.size != grid.n_paths:
            raise ScenarioError(
                f"cost table has {arr.size} entries, grid has {grid.n_paths} paths"
            )
        return arr
    return evaluate_cost_expression(grid, block["expression"])


def _times(grid):
    return grid.horizon + 1


def build_penalty(doc: dict, grid: MarketGrid):
    block = doc["penalty"]
    family = block["family"]
    T1 = _times(grid)

    def need(key):
        if key not in block:
            raise ScenarioError(f"penalty family {family!r} needs {key!r}")
        if len(block[key]) != T1:
            raise ScenarioError(f"{key!r} needs one entry per time (got "
                                f"{len(block[key])}, expected {T1})")
        return block[key]

    if family == "fixed_marginals":
        return FixedMarginals.of([np.asarray(t, dtype=float) for t in need("targets")])
    if family == "divergence":
        utils = [_build_utility(u) for u in need("utilities")]
        refs = [np.asarray(r, dtype=float) for r in need("references")]
        return DivergenceSum.of(utils, refs)
    if family == "market_price":
        quotes = []
        for t, per_t in enumerate(need("quotes")):
            qt = []
            for q in per_t:
                if "payoff" in q:
                    payoff = np.asarray(q["payoff"], dtype=float)
                elif "payoff_expression" in q:
                    payoff = _node_payoff(grid, t, q["payoff_expression"])
                else:
                    raise ScenarioError("quote needs payoff or payoff_expression")
                if payoff.size != grid.n_joint_nodes(t):
                    raise ScenarioError(
                        f"time-{t} payoff has {payoff.size} entries, "
                        f"node set has {grid.n_joint_nodes(t)}"
                    )
                qt.append(OptionQuote.of(payoff, q["price"], _build_loss(q["loss"])))
            quotes.append(qt)
        return MarketPrice.of(quotes)
    # wasserstein_ball
    refs = [np.asarray(r, dtype=float) for r in need("references")]
    losses = [_build_loss(l) for l in need("losses")]
    return WassersteinBall.of(refs, losses)


def build_cone(doc: dict) -> ConeSpec:
    block = doc["cone"]
    return ConeSpec(block["tag"], eps=float(block.get("eps", 0.0)))


def build_options(doc: dict, overrides: dict | None = None) -> SolverOptions:
    block = dict(doc.get("solver", {}))
    if overrides:
        block.update({k: v for k, v in overrides.items() if v is not None})
    return SolverOptions(
        backend=block.get("backend", "auto"),
        tol=block.get("tol"),
        max_iter=int(block.get("max_iter", 50_000)),
        seed=int(block.get("seed", 0)),
    )


def build(doc: dict, overrides: dict | None = None):
    """Full scenario -> (grid, cost, penalty, cone, options)."""
    grid = build_grid(doc)
    return (
        grid,
        build_cost(doc, grid),
        build_penalty(doc, grid),
        build_cone(doc),
        build_options(doc, overrides),
    )


def sequence_block(doc: dict) -> dict:
    if "sequence" not in doc:
        raise ScenarioError("scenario has no sequence block")
    block = doc["sequence"]
    kind = block["kind"]
    key = {
        "utility_scaling": "indices",
        "eps_martingale": "eps_values",
        "wasserstein_radius": "radii",
    }[kind]
    if not block.get(key):
        raise ScenarioError(f"sequence kind {kind!r} needs a nonempty {key!r}")
    return block


def catalog() -> dict:
    """Machine-readable parameter catalog; round-trips with the schema."""
    return {
        "utilities": list(UTILITY_NAMES),
        "losses": list(LOSS_KINDS),
        "penalties": list(PENALTY_FAMILIES),
        "cones": list(CONE_TAGS),
        "sequence_kinds": list(SEQUENCE_KINDS),
        "backends": ["auto", "lp", "fw", "oracle"],
        "cost_grammar": {
            "operators": ["+", "-", "*", "/", "^"],
            "functions": {"max": 2, "min": 2, "abs": 1, "call": 2},
            "variables": "x<t> (asset 0) or x<t>_<j>",
        },
        "schema": SCHEMA,
    }
