"""Expression trees over a primitive set.

Candidate solutions are immutable operator trees built from a primitive set
(function symbols with arities, argument terminals, symbolic-constant
terminals).  Trees travel as space-separated prefix (Polish) notation
strings, which double as canonical cache keys.  Evaluation is total:
non-finite intermediate values propagate instead of raising.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .errors import EvaluationError, ParseError, PrimitiveSetError

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

# Default value bound to a symbolic constant when no numeric value is
# supplied (mirrors the experiment-server behavior for bare constants).
DEFAULT_CONSTANT = 1.0


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _sin(a: float) -> float:
    # math.sin raises on +-inf; propagate as nan instead
    if math.isinf(a):
        return math.nan
    return math.sin(a)


def _add(a: float, b: float) -> float:
    return a + b


def _sub(a: float, b: float) -> float:
    return a - b


def _mul(a: float, b: float) -> float:
    return a * b


def _neg(a: float) -> float:
    return -a


#: Numeric semantics of the canonical function symbols.
FUNCTION_IMPLS: dict[str, Callable[..., float]] = {
    "Add": _add,
    "Sub": _sub,
    "Mul": _mul,
    "Neg": _neg,
    "Exp": _exp,
    "Sin": _sin,
}


@dataclass(frozen=True)
class Primitive:
    """A named symbol with a fixed arity; arity 0 marks a terminal."""

    name: str
    arity: int

    def __post_init__(self) -> None:
        if not _NAME_RE.fullmatch(self.name):
            raise PrimitiveSetError(f"invalid primitive name: {self.name!r}")
        if self.arity < 0:
            raise PrimitiveSetError(f"negative arity for {self.name!r}")


@dataclass(frozen=True)
class PrimitiveSet:
    """The alphabet trees are built from.

    ``functions`` all have arity >= 1; ``arguments`` and ``constants`` are
    terminal names.  Names are unique across the three groups and at least
    one terminal must exist, otherwise no finite tree can be generated.
    """

    functions: tuple[Primitive, ...]
    arguments: tuple[str, ...]
    constants: tuple[str, ...]
    _by_name: dict[str, Primitive] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        by_name: dict[str, Primitive] = {}
        for prim in self.functions:
            if prim.arity < 1:
                raise PrimitiveSetError(
                    f"function {prim.name!r} must have arity >= 1"
                )
            if prim.name in by_name:
                raise PrimitiveSetError(f"duplicate primitive name: {prim.name!r}")
            by_name[prim.name] = prim
        for name in (*self.arguments, *self.constants):
            terminal = Primitive(name, 0)
            if name in by_name:
                raise PrimitiveSetError(f"duplicate primitive name: {name!r}")
            by_name[name] = terminal
        if not self.arguments and not self.constants:
            raise PrimitiveSetError("primitive set has no terminals")
        object.__setattr__(self, "_by_name", by_name)

    @property
    def terminals(self) -> tuple[str, ...]:
        return self.arguments + self.constants

    def lookup(self, name: str) -> Primitive | None:
        return self._by_name.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name


def build_pset(
    functions: Mapping[str, int] | Iterable[tuple[str, int]],
    arguments: Sequence[str],
    constants: Sequence[str] = (),
) -> PrimitiveSet:
    """Validate and assemble a primitive set.

    ``functions`` maps symbol name to arity (or is an iterable of pairs);
    ``arguments`` and ``constants`` list terminal names.  Raises
    :class:`PrimitiveSetError` on duplicate names or a zero-arity function.
    """
    if isinstance(functions, Mapping):
        pairs = functions.items()
    else:
        pairs = tuple(functions)
    prims = tuple(Primitive(name, arity) for name, arity in pairs)
    return PrimitiveSet(prims, tuple(arguments), tuple(constants))


@dataclass(frozen=True)
class Node:
    """One tree node: a primitive symbol, or a numeric literal leaf.

    ``symbol`` is a primitive name (str) or a float literal (used once
    symbolic constants have been resolved to numbers).
    """

    symbol: str | float
    children: tuple["Node", ...] = ()

    @property
    def is_literal(self) -> bool:
        return not isinstance(self.symbol, str)


@dataclass(frozen=True)
class Expression:
    """An immutable tree over a primitive set."""

    root: Node
    pset: PrimitiveSet

    def __str__(self) -> str:
        return print_prefix(self)

    def __len__(self) -> int:
        return length(self)


def iter_nodes(root: Node) -> Iterator[Node]:
    """Yield nodes in preorder (depth-first, children left to right)."""
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def length(expr: Expression) -> int:
    """Number of nodes in the tree."""
    return sum(1 for _ in iter_nodes(expr.root))


def height(expr: Expression) -> int:
    """Edges on the longest root-to-leaf path (0 for a single leaf)."""
    best = 0
    stack = [(expr.root, 0)]
    while stack:
        node, depth = stack.pop()
        if depth > best:
            best = depth
        stack.extend((child, depth + 1) for child in node.children)
    return best


def _token(node: Node) -> str:
    if node.is_literal:
        return repr(node.symbol)
    return node.symbol  # type: ignore[return-value]


def print_prefix(expr: Expression) -> str:
    """Render the tree as a space-separated preorder token string.

    The output is canonical: parsing it back yields a structurally equal
    tree, and it is the key used for caching and the wire protocol.
    Numeric literals print as shortest round-trippable decimals.
    """
    return " ".join(_token(node) for node in iter_nodes(expr.root))


def parse_prefix(text: str, pset: PrimitiveSet) -> Expression:
    """Parse a prefix-notation token string into an expression.

    Tokens are separated by single ASCII spaces.  A token is either a
    primitive name from ``pset`` or a numeric literal.  Raises
    :class:`ParseError` on unknown symbols, truncated input, or trailing
    tokens.
    """
    if not text:
        raise ParseError("empty expression string")
    tokens = text.split(" ")

    # Frames of (node under construction, collected children); a completed
    # node pops into its parent's child list.
    root: Node | None = None
    frames: list[tuple[str, int, list[Node]]] = []

    def complete(node: Node) -> Node | None:
        # Attach to the innermost open frame, reducing finished frames.
        while frames:
            symbol, arity, children = frames[-1]
            children.append(node)
            if len(children) < arity:
                return None
            frames.pop()
            node = Node(symbol, tuple(children))
        return node

    for position, token in enumerate(tokens):
        if root is not None:
            raise ParseError(
                f"trailing tokens starting at position {position}: {token!r}"
            )
        if not token:
            raise ParseError(f"empty token at position {position}")
        prim = pset.lookup(token)
        if prim is None:
            try:
                value = float(token)
            except ValueError:
                raise ParseError(
                    f"unknown symbol {token!r} at position {position}"
                ) from None
            node: Node | None = Node(value)
        elif prim.arity == 0:
            node = Node(prim.name)
        else:
            frames.append((prim.name, prim.arity, []))
            continue
        root = complete(node)

    if root is None:
        # Each completed inner frame fills one slot of its parent frame.
        missing = sum(
            arity - len(children) for _, arity, children in frames
        ) - (len(frames) - 1)
        raise ParseError(f"truncated expression: expected {missing} more token(s)")
    return Expression(root, pset)


def evaluate(
    expr: Expression,
    bindings: Mapping[str, float],
    constants: Mapping[str, float] | None = None,
) -> float:
    """Evaluate the tree at the given argument and constant values.

    Non-finite intermediate results propagate to the return value and are
    never raised.  A symbol with no binding and no implementation raises
    :class:`EvaluationError`.
    """
    env = dict(bindings)
    if constants:
        env.update(constants)

    # Iterative post-order evaluation so arbitrarily deep trees stay safe.
    values: list[float] = []
    stack: list[tuple[Node, bool]] = [(expr.root, False)]
    while stack:
        node, expanded = stack.pop()
        if node.is_literal:
            values.append(float(node.symbol))
            continue
        symbol: str = node.symbol  # type: ignore[assignment]
        if not node.children:
            try:
                values.append(float(env[symbol]))
            except KeyError:
                raise EvaluationError(f"no binding for terminal {symbol!r}") from None
            continue
        if not expanded:
            stack.append((node, True))
            stack.extend((child, False) for child in reversed(node.children))
            continue
        impl = FUNCTION_IMPLS.get(symbol)
        if impl is None:
            raise EvaluationError(f"no implementation for function {symbol!r}")
        arity = len(node.children)
        args = values[-arity:]
        del values[-arity:]
        values.append(impl(*args))
    return values[0]


def resolve_constants(
    expr: Expression, values: Mapping[str, float]
) -> Expression:
    """Replace symbolic-constant leaves with numeric literals.

    Constants without an entry in ``values`` are left symbolic, so a
    partially resolved expression is still printable and parseable.
    """
    names = set(expr.pset.constants) & set(values)
    if not names:
        return expr

    def rewrite(node: Node) -> Node:
        if not node.children:
            if not node.is_literal and node.symbol in names:
                return Node(float(values[node.symbol]))  # type: ignore[index]
            return node
        return Node(node.symbol, tuple(rewrite(child) for child in node.children))

    return Expression(rewrite(expr.root), expr.pset)


def constant_names(expr: Expression) -> tuple[str, ...]:
    """Symbolic-constant terminals occurring in the tree, in pset order."""
    present = {
        node.symbol
        for node in iter_nodes(expr.root)
        if not node.is_literal and not node.children
    }
    return tuple(name for name in expr.pset.constants if name in present)


def compile_callable(
    expr: Expression,
    arguments: Sequence[str],
    constants: Mapping[str, float] | None = None,
    default_constant: float = DEFAULT_CONSTANT,
) -> Callable[..., float]:
    """Compile the tree to a fast positional callable over ``arguments``.

    Symbolic constants are baked in from ``constants`` (falling back to
    ``default_constant``).  The compiled function computes exactly the same
    values as :func:`evaluate`.
    """
    values = dict(constants) if constants else {}
    arg_set = set(arguments)

    def emit(node: Node) -> str:
        if node.is_literal:
            return repr(node.symbol)
        symbol: str = node.symbol  # type: ignore[assignment]
        if not node.children:
            if symbol in arg_set:
                return symbol
            if symbol in expr.pset.constants:
                return repr(float(values.get(symbol, default_constant)))
            raise EvaluationError(f"no binding for terminal {symbol!r}")
        parts = [emit(child) for child in node.children]
        if symbol == "Add":
            return f"({parts[0]}+{parts[1]})"
        if symbol == "Sub":
            return f"({parts[0]}-{parts[1]})"
        if symbol == "Mul":
            return f"({parts[0]}*{parts[1]})"
        if symbol == "Neg":
            return f"(-{parts[0]})"
        if symbol == "Exp":
            return f"_exp({parts[0]})"
        if symbol == "Sin":
            return f"_sin({parts[0]})"
        raise EvaluationError(f"no implementation for function {symbol!r}")

    source = f"lambda {', '.join(arguments)}: {emit(expr.root)}"
    namespace = {"_exp": _exp, "_sin": _sin, "__builtins__": {}}
    return eval(source, namespace)  # noqa: S307 - generated from validated tree


def node_at(root: Node, index: int) -> Node:
    """Return the node at the given preorder index."""
    for i, node in enumerate(iter_nodes(root)):
        if i == index:
            return node
    raise IndexError(index)


def replace_node(root: Node, index: int, replacement: Node) -> Node:
    """Return a new tree with the subtree at ``index`` (preorder) swapped out."""
    if index < 0:
        raise IndexError(index)
    seen = 0
    done = False

    def walk(node: Node) -> Node:
        nonlocal seen, done
        if done:
            return node
        if seen == index:
            done = True
            return replacement
        seen += 1
        if not node.children:
            return node
        return Node(node.symbol, tuple(walk(child) for child in node.children))

    result = walk(root)
    if not done:
        raise IndexError(index)
    return result


def generate_half_and_half(
    pset: PrimitiveSet, min_height: int, max_height: int, rng
) -> Expression:
    """Generate a random tree by the ramped half-and-half scheme.

    With probability 1/2 a "full" tree (all leaves at the target depth),
    otherwise a "grow" tree; the target depth is uniform in
    [min_height, max_height].  Full trees have height in that interval,
    grow trees height <= max_height.
    """
    if not (1 <= min_height <= max_height):
        raise ValueError("need 1 <= min_height <= max_height")
    if not pset.functions:
        raise PrimitiveSetError("tree generation needs at least one function")
    full = rng.random() < 0.5
    return _generate(pset, min_height, max_height, rng, full=full)


def generate_grow(
    pset: PrimitiveSet, min_height: int, max_height: int, rng
) -> Expression:
    """Generate a random "grow" tree with height in [0, max_height]."""
    return _generate(pset, min_height, max_height, rng, full=False)


def _generate(
    pset: PrimitiveSet, min_height: int, max_height: int, rng, full: bool
) -> Expression:
    target = rng.randint(min_height, max_height)
    terminals = pset.terminals
    functions = pset.functions
    # Grow mode draws uniformly over functions and terminals once past the
    # minimum height; full mode forces functions until the target depth.
    pool: tuple[Primitive | str, ...] = (*functions, *terminals)

    def build(depth: int) -> Node:
        if depth == target:
            return Node(rng.choice(terminals))
        if full or depth < min_height:
            prim = rng.choice(functions)
        else:
            chosen = rng.choice(pool)
            if isinstance(chosen, str):
                return Node(chosen)
            prim = chosen
        return Node(prim.name, tuple(build(depth + 1) for _ in range(prim.arity)))

    return Expression(build(0), pset)
