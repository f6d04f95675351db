"""Expression trees stored as prefix (S-expression) token tuples.

A program is a tuple of tokens in prefix order:

* ``str``   -- a function name from a :class:`FunctionSet`
* ``int``   -- a variable (feature column index)
* ``float`` -- a constant

Trees are immutable; every operator returns a new tree.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Function",
    "FunctionSet",
    "DEFAULT_FUNCTIONS",
    "ExprTree",
    "protected_div",
    "evaluate",
    "size",
    "random_full_tree",
    "point_mutate",
    "subtree_crossover",
    "canonicalize",
    "to_infix",
    "to_prefix",
    "parse",
    "ParseError",
]

DIV_EPS = 1e-6
VALUE_BOUND = 1e100


def protected_div(a, b):
    """``a / b``, or ``1.0`` wherever ``|b| < 1e-6``."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = np.ones(a.shape)
    np.divide(a, b, out=out, where=np.abs(b) >= DIV_EPS)
    return np.clip(out, -VALUE_BOUND, VALUE_BOUND, out=out)


def _mul(a, b):
    return np.clip(np.multiply(a, b), -VALUE_BOUND, VALUE_BOUND)


def _inv(a):
    return protected_div(1.0, a)


def _sqrt(a):
    return np.sqrt(np.abs(a))


def _log(a):
    a = np.abs(a)
    out = np.zeros(np.shape(a))
    np.log(a, out=out, where=a >= DIV_EPS)
    return out


def _square(a):
    return np.clip(np.square(a), 0.0, VALUE_BOUND)


@dataclass(frozen=True)
class Function:
    name: str
    arity: int
    fn: Callable
    symbol: str | None = None      # infix operator, binary functions only
    precedence: int = 3
    commutative: bool = False


_ALL_FUNCTIONS = {
    f.name: f for f in (
        Function("add", 2, np.add, "+", 1, True),
        Function("sub", 2, np.subtract, "-", 1),
        Function("mul", 2, _mul, "*", 2, True),
        Function("div", 2, protected_div, "/", 2),
        Function("neg", 1, np.negative),
        Function("inv", 1, _inv),
        Function("sqrt", 1, _sqrt),
        Function("log", 1, _log),
        Function("sin", 1, np.sin),
        Function("cos", 1, np.cos),
        Function("sq", 1, _square),
    )
}


class FunctionSet:
    """An ordered, non-empty collection of enabled functions."""

    def __init__(self, names: Sequence[str] = ("add", "sub", "mul", "div")):
        names = tuple(names)
        if not names:
            raise ValueError("function set must not be empty")
        unknown = [n for n in names if n not in _ALL_FUNCTIONS]
        if unknown:
            raise ValueError(f"unknown functions {unknown}; "
                             f"available: {sorted(_ALL_FUNCTIONS)}")
        if len(set(names)) != len(names):
            raise ValueError("duplicate function names")
        self.names = names
        self.functions = tuple(_ALL_FUNCTIONS[n] for n in names)
        self._by_arity = {}
        for f in self.functions:
            self._by_arity.setdefault(f.arity, []).append(f.name)

    def __contains__(self, name) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.functions)

    def __repr__(self) -> str:
        return f"FunctionSet({self.names!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, FunctionSet) and other.names == self.names

    def __hash__(self) -> int:
        return hash(self.names)

    def __getitem__(self, name: str) -> Function:
        return _ALL_FUNCTIONS[name]

    def with_arity(self, arity: int) -> list[str]:
        return list(self._by_arity.get(arity, ()))

    @property
    def binary(self) -> list[str]:
        return self.with_arity(2)


DEFAULT_FUNCTIONS = FunctionSet()


def _arity(tok) -> int:
    return _ALL_FUNCTIONS[tok].arity if isinstance(tok, str) else 0


def _normalize_token(tok):
    if isinstance(tok, str):
        if tok not in _ALL_FUNCTIONS:
            raise ValueError(f"unknown function {tok!r}")
        return tok
    if isinstance(tok, (bool, np.bool_)):
        raise TypeError("boolean tokens are not allowed")
    if isinstance(tok, (int, np.integer)):
        if tok < 0:
            raise ValueError(f"negative variable index {tok}")
        return int(tok)
    if isinstance(tok, (float, np.floating)):
        return float(tok)
    raise TypeError(f"bad token {tok!r}")


@dataclass(frozen=True)
class ExprTree:
    """An expression in prefix form.

    >>> t = ExprTree(("add", 0, "mul", 1, 2))
    >>> t.size
    5
    """

    program: tuple

    def __post_init__(self):
        prog = tuple(_normalize_token(t) for t in self.program)
        if not prog:
            raise ValueError("empty program")
        need = 1
        for i, tok in enumerate(prog):
            if need == 0:
                raise ValueError(f"trailing tokens after position {i}")
            need += _arity(tok) - 1
        if need != 0:
            raise ValueError("incomplete program: missing arguments")
        object.__setattr__(self, "program", prog)

    @property
    def size(self) -> int:
        return len(self.program)

    @property
    def depth(self) -> int:
        stack = []
        for tok in reversed(self.program):
            k = _arity(tok)
            stack.append(1 + max(stack.pop() for _ in range(k)) if k else 0)
        return stack[-1]

    def variables(self) -> set[int]:
        return {t for t in self.program if isinstance(t, int)}

    def constants(self) -> list[float]:
        return [t for t in self.program if isinstance(t, float)]

    def subtree_end(self, start: int) -> int:
        return _subtree_end(self.program, start)

    def __str__(self) -> str:
        return to_infix(self)


def _subtree_end(program, start: int) -> int:
    need = 1
    i = start
    while need:
        need += _arity(program[i]) - 1
        i += 1
    return i


def size(tree: ExprTree) -> int:
    """Total node count."""
    return len(tree.program)


def evaluate(tree: ExprTree, data) -> np.ndarray:
    """Evaluate ``tree`` row-wise on a feature matrix or :class:`Dataset`.

    Division is protected and intermediate magnitudes are bounded, so the
    result is finite whenever the input is.
    """
    X = getattr(data, "features", data)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    n_rows, n_cols = X.shape
    stack = []
    for tok in reversed(tree.program):
        if isinstance(tok, str):
            f = _ALL_FUNCTIONS[tok]
            args = [stack.pop() for _ in range(f.arity)]
            stack.append(f.fn(*args))
        elif isinstance(tok, int):
            if tok >= n_cols:
                raise IndexError(
                    f"variable index {tok} out of range for {n_cols} columns")
            stack.append(X[:, tok])
        else:
            stack.append(np.full(n_rows, tok))
    out = stack[-1]
    if np.ndim(out) == 0 or out.shape != (n_rows,):
        out = np.broadcast_to(out, (n_rows,))
    return np.array(out, dtype=float)


# --------------------------------------------------------------------------
# random generation and genetic operators


def _leaf_probs(n_features: int, weights) -> np.ndarray:
    if weights is None:
        p = np.full(n_features + 1, 1.0 / (n_features + 1))
    else:
        p = np.asarray(weights, dtype=float)
        if p.shape != (n_features + 1,):
            raise ValueError(
                f"weights must cover {n_features} features plus the constant slot")
        if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise ValueError("leaf weights must be non-negative and sum to 1")
        p = p / p.sum()
    return p


def _random_terminal(rng, features, probs, const_range):
    j = rng.choice(len(probs), p=probs)
    if j == len(features):
        return float(rng.uniform(*const_range))
    return int(features[j])


def random_full_tree(depth: int, features: Sequence[int], weights=None,
                     rng=None, *, functions: FunctionSet = DEFAULT_FUNCTIONS,
                     const_range=(-5.0, 5.0)) -> ExprTree:
    """Grow a full tree whose leaves all sit at exactly ``depth``.

    ``weights`` gives leaf probabilities over ``features`` followed by one
    constant slot; by default all slots are equally likely. Internal nodes
    are drawn uniformly from the binary functions.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    rng = np.random.default_rng(rng)
    features = list(features)
    probs = _leaf_probs(len(features), weights)
    binary = functions.binary
    if depth > 0 and not binary:
        raise ValueError("full trees need at least one binary function")
    program = []

    def grow(d):
        if d == depth:
            program.append(_random_terminal(rng, features, probs, const_range))
            return
        program.append(binary[rng.integers(len(binary))])
        grow(d + 1)
        grow(d + 1)

    grow(0)
    return ExprTree(tuple(program))


def point_mutate(tree: ExprTree, rng=None, *, features: Sequence[int] | None = None,
                 weights=None, functions: FunctionSet = DEFAULT_FUNCTIONS,
                 const_range=(-5.0, 5.0)) -> ExprTree:
    """Replace one uniformly chosen node with a different feasible value.

    Functions are swapped for another function of the same arity; terminals
    for another terminal (variable or constant) drawn per ``weights``.
    """
    rng = np.random.default_rng(rng)
    prog = list(tree.program)
    if features is None:
        features = sorted(tree.variables()) or [0]
    features = list(features)
    probs = _leaf_probs(len(features), weights)
    i = int(rng.integers(len(prog)))
    tok = prog[i]
    if isinstance(tok, str):
        options = [f for f in functions.with_arity(_arity(tok)) if f != tok]
        if options:
            prog[i] = options[rng.integers(len(options))]
    else:
        new = tok
        for _ in range(8):
            new = _random_terminal(rng, features, probs, const_range)
            if new != tok or type(new) is not type(tok):
                break
        prog[i] = new
    return ExprTree(tuple(prog))


def subtree_crossover(a: ExprTree, b: ExprTree, rng=None) -> tuple[ExprTree, ExprTree]:
    """Swap a random subtree of ``a`` with a random subtree of ``b``."""
    rng = np.random.default_rng(rng)
    pa, pb = a.program, b.program
    ia = int(rng.integers(len(pa)))
    ib = int(rng.integers(len(pb)))
    ja = _subtree_end(pa, ia)
    jb = _subtree_end(pb, ib)
    child1 = pa[:ia] + pb[ib:jb] + pa[ja:]
    child2 = pb[:ib] + pa[ia:ja] + pb[jb:]
    return ExprTree(child1), ExprTree(child2)


# --------------------------------------------------------------------------
# canonical keys


def _fmt_const(v: float) -> str:
    return f"{round(v, 3) + 0.0:.3f}"


def _to_nested(program):
    stack = []
    for tok in reversed(program):
        if isinstance(tok, str):
            k = _ALL_FUNCTIONS[tok].arity
            stack.append((tok, [stack.pop() for _ in range(k)]))
        elif isinstance(tok, int):
            stack.append(("v", tok))
        else:
            stack.append(("c", tok))
    return stack[-1]


def _canon(node):
    """Return ``(key, const_value_or_None)`` for a nested node."""
    kind = node[0]
    if kind == "v":
        return f"x{node[1]}", None
    if kind == "c":
        return _fmt_const(node[1]), node[1]
    f = _ALL_FUNCTIONS[kind]
    kids = [_canon(c) for c in node[1]]
    if all(v is not None for _, v in kids):
        val = float(f.fn(*[np.array([v]) for _, v in kids])[0])
        return _fmt_const(val), val
    if f.commutative:
        flat = []
        for child, (key, val) in zip(node[1], kids):
            if child[0] == kind and val is None:
                flat.extend(_flat_children(child, kind))
            else:
                flat.append((key, val))
        consts = [v for _, v in flat if v is not None]
        terms = [k for k, v in flat if v is None]
        if len(consts) > 1:
            acc = consts[0]
            for v in consts[1:]:
                acc = float(f.fn(np.array([acc]), np.array([v]))[0])
            consts = [acc]
        keys = sorted(terms + [_fmt_const(v) for v in consts])
        return f"{kind}({','.join(keys)})", None
    return f"{kind}({','.join(k for k, _ in kids)})", None


def _flat_children(node, kind):
    out = []
    for child in node[1]:
        key, val = _canon(child)
        if child[0] == kind and val is None:
            out.extend(_flat_children(child, kind))
        else:
            out.append((key, val))
    return out


def canonicalize(tree: ExprTree) -> str:
    """Deterministic structural key.

    Constant subexpressions are folded, add/mul chains flattened with their
    operands sorted, and constants rounded to three decimals. Variables
    print as ``x<index>`` (0-based).
    """
    return _canon(_to_nested(tree.program))[0]


# --------------------------------------------------------------------------
# printing and parsing


def _fmt_num(v: float) -> str:
    return f"{v:.6g}"


def _infix(node, names):
    """Return ``(text, precedence)``."""
    kind = node[0]
    if kind == "v":
        i = node[1]
        return (names[i] if names is not None and i < len(names) else f"x{i}"), 9
    if kind == "c":
        s = _fmt_num(node[1])
        return s, (9 if node[1] >= 0 else 0)
    f = _ALL_FUNCTIONS[kind]
    if f.symbol is None:
        inner = ", ".join(_infix(c, names)[0] for c in node[1])
        return f"{kind}({inner})", 9
    (lt, lp), (rt, rp) = (_infix(c, names) for c in node[1])
    p = f.precedence
    if lp < p or (lp == 0):
        lt = f"({lt})"
    if rp < p or (rp == p and not f.commutative) or rp == 0:
        rt = f"({rt})"
    return f"{lt} {f.symbol} {rt}", p


def to_infix(tree: ExprTree, names: Sequence[str] | None = None) -> str:
    """Human-readable infix string with minimal parentheses."""
    text, _ = _infix(_to_nested(tree.program), names)
    return text


def to_prefix(tree: ExprTree, names: Sequence[str] | None = None) -> str:
    """Functional prefix notation accepted by :func:`parse`."""

    def rec(node):
        if node[0] == "v":
            i = node[1]
            return names[i] if names is not None else f"x{i}"
        if node[0] == "c":
            return repr(float(node[1]))
        return f"{node[0]}({', '.join(rec(c) for c in node[1])})"

    return rec(_to_nested(tree.program))


class ParseError(ValueError):
    pass


_TOKEN = re.compile(r"\s*(?:(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
                    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<punct>[(),]))")


def parse(text: str, names: Sequence[str] | None = None) -> ExprTree:
    """Parse functional prefix notation such as ``add(x1, mul(x2, 3.5))``.

    Identifiers not followed by ``(`` are variables resolved against
    ``names``; without ``names``, ``x<k>`` denotes column ``k``.
    """
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        pos = m.end()
        tokens.append((m.lastgroup, m.group(m.lastgroup)))
    lookup = {n: i for i, n in enumerate(names)} if names is not None else None
    program = []
    i = 0

    def expect(p):
        nonlocal i
        if i >= len(tokens) or tokens[i] != ("punct", p):
            raise ParseError(f"expected {p!r} at token {i}")
        i += 1

    def node():
        nonlocal i
        if i >= len(tokens):
            raise ParseError("unexpected end of expression")
        kind, val = tokens[i]
        i += 1
        if kind == "num":
            program.append(float(val))
            return
        if kind != "name":
            raise ParseError(f"unexpected {val!r}")
        if i < len(tokens) and tokens[i] == ("punct", "("):
            if val not in _ALL_FUNCTIONS:
                raise ParseError(f"unknown function {val!r}")
            f = _ALL_FUNCTIONS[val]
            program.append(val)
            expect("(")
            for k in range(f.arity):
                if k:
                    expect(",")
                node()
            expect(")")
            return
        if lookup is not None:
            if val not in lookup:
                raise ParseError(f"unknown variable {val!r}")
            program.append(lookup[val])
        else:
            m = re.fullmatch(r"x(\d+)", val)
            if not m:
                raise ParseError(f"unknown variable {val!r}")
            program.append(int(m.group(1)))

    node()
    if i != len(tokens):
        raise ParseError("trailing tokens")
    return ExprTree(tuple(program))
