"""Expression-tree unit tests: parsing, printing, evaluation, generation."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symreg.errors import EvaluationError, ParseError, PrimitiveSetError
from symreg.expressions import (
    Expression,
    Node,
    build_pset,
    compile_callable,
    constant_names,
    evaluate,
    generate_grow,
    generate_half_and_half,
    height,
    iter_nodes,
    length,
    node_at,
    parse_prefix,
    print_prefix,
    replace_node,
    resolve_constants,
)

FUNCTIONS = {"Add": 2, "Sub": 2, "Mul": 2, "Neg": 1, "Exp": 1, "Sin": 1}


@pytest.fixture
def pset():
    return build_pset(FUNCTIONS, ["x", "y", "z"], ["k"])


class TestPrimitiveSet:
    def test_duplicate_name_rejected(self):
        with pytest.raises(PrimitiveSetError):
            build_pset({"Add": 2}, ["x", "x"])

    def test_name_shared_between_function_and_terminal_rejected(self):
        with pytest.raises(PrimitiveSetError):
            build_pset({"x": 1}, ["x"])

    def test_zero_arity_function_rejected(self):
        with pytest.raises(PrimitiveSetError):
            build_pset({"Nullary": 0}, ["x"])

    def test_no_terminals_rejected(self):
        with pytest.raises(PrimitiveSetError):
            build_pset({"Add": 2}, [])

    def test_bad_name_rejected(self):
        with pytest.raises(PrimitiveSetError):
            build_pset({"2bad": 1}, ["x"])
        with pytest.raises(PrimitiveSetError):
            build_pset({"Add": 2}, ["a b"])

    def test_terminal_order_is_arguments_then_constants(self, pset):
        assert pset.terminals == ("x", "y", "z", "k")

    def test_lookup(self, pset):
        assert pset.lookup("Add").arity == 2
        assert pset.lookup("k").arity == 0
        assert pset.lookup("nope") is None
        assert "Sin" in pset


class TestParsePrint:
    def test_single_terminal(self, pset):
        expr = parse_prefix("x", pset)
        assert expr.root == Node("x")
        assert print_prefix(expr) == "x"

    def test_nested(self, pset):
        expr = parse_prefix("Add Mul k x z", pset)
        assert expr.root == Node(
            "Add", (Node("Mul", (Node("k"), Node("x"))), Node("z"))
        )

    def test_numeric_literal(self, pset):
        expr = parse_prefix("Mul 2.5 x", pset)
        assert expr.root.children[0] == Node(2.5)
        assert print_prefix(expr) == "Mul 2.5 x"

    def test_negative_literal(self, pset):
        expr = parse_prefix("Add x -135.43", pset)
        assert evaluate(expr, {"x": 0.0}) == -135.43

    def test_empty_string(self, pset):
        with pytest.raises(ParseError):
            parse_prefix("", pset)

    def test_unknown_symbol(self, pset):
        with pytest.raises(ParseError, match="unknown symbol 'Cos'"):
            parse_prefix("Cos x", pset)

    def test_truncated(self, pset):
        with pytest.raises(ParseError, match="truncated"):
            parse_prefix("Add x", pset)
        with pytest.raises(ParseError, match="2 more"):
            parse_prefix("Add Mul x", pset)

    def test_trailing_tokens(self, pset):
        with pytest.raises(ParseError, match="trailing"):
            parse_prefix("x y", pset)
        with pytest.raises(ParseError, match="trailing"):
            parse_prefix("Neg x x", pset)

    def test_double_space_is_an_error(self, pset):
        with pytest.raises(ParseError, match="empty token"):
            parse_prefix("Add x  y", pset)

    def test_str_dunder_matches_print(self, pset):
        expr = parse_prefix("Neg Exp x", pset)
        assert str(expr) == "Neg Exp x"


# Prefix encodings of published control laws, with hand-counted lengths.
KNOWN_LENGTHS = [
    ("Add Neg Exp x Mul k y", 7),
    ("Add Mul k x z", 5),
    ("Add Neg z Mul k y", 6),
    ("Neg Mul k y", 4),
    ("Mul Mul Neg x Add k y Exp Exp y", 10),
    ("Mul Neg x Add k y", 6),
    ("Mul Mul Neg x Add k y Exp y", 9),
    ("Neg Exp y", 3),
    ("Neg x", 2),
    ("k", 1),
    ("Neg y", 2),
    ("z", 1),
    ("Neg Add Add Add Mul k Neg y Mul x z y z", 13),
    ("Exp Add Neg k Mul y Sin y", 8),
    ("Mul Add k x Add y z", 7),
    ("Exp Add k Mul y Sin y", 7),
    ("Add y Exp k", 4),
    ("Add x Exp Exp k", 5),
    ("Mul Add k x Exp y", 6),
]


class TestLengthHeight:
    @pytest.mark.parametrize("text,expected", KNOWN_LENGTHS)
    def test_known_lengths(self, pset, text, expected):
        expr = parse_prefix(text, pset)
        assert length(expr) == expected
        assert len(expr) == expected
        assert len(text.split(" ")) == expected

    def test_height_leaf(self, pset):
        assert height(parse_prefix("k", pset)) == 0

    def test_height_nested(self, pset):
        assert height(parse_prefix("Add Mul k x z", pset)) == 2
        assert height(parse_prefix("Neg Exp Sin x", pset)) == 3


class TestEvaluate:
    def test_published_law_value(self, pset):
        # k*x + z at the initial state of the benchmark system
        expr = parse_prefix("Add Mul k x z", pset)
        value = evaluate(expr, {"x": 10.0, "y": 1.0, "z": 5.0}, {"k": -27.84})
        assert value == pytest.approx(-273.4, abs=1e-12)

    def test_sub_self_is_zero(self, pset):
        expr = parse_prefix("Sub x x", pset)
        assert evaluate(expr, {"x": 3.7}) == 0.0

    def test_all_functions(self, pset):
        cases = [
            ("Add x y", 5.0),
            ("Sub x y", -1.0),
            ("Mul x y", 6.0),
            ("Neg x", -2.0),
            ("Exp x", math.exp(2.0)),
            ("Sin y", math.sin(3.0)),
        ]
        for text, expected in cases:
            got = evaluate(parse_prefix(text, pset), {"x": 2.0, "y": 3.0})
            assert got == pytest.approx(expected, rel=1e-15), text

    def test_exp_overflow_returns_inf(self, pset):
        expr = parse_prefix("Exp x", pset)
        assert evaluate(expr, {"x": 1e4}) == math.inf

    def test_sin_of_inf_returns_nan(self, pset):
        expr = parse_prefix("Sin Exp x", pset)
        assert math.isnan(evaluate(expr, {"x": 1e4}))

    def test_nonfinite_propagates_without_raising(self, pset):
        expr = parse_prefix("Add Mul Exp Exp x y z", pset)
        value = evaluate(expr, {"x": 100.0, "y": -1.0, "z": 0.0})
        assert value == -math.inf

    def test_missing_binding(self, pset):
        expr = parse_prefix("Add x k", pset)
        with pytest.raises(EvaluationError, match="no binding for terminal 'k'"):
            evaluate(expr, {"x": 1.0})

    def test_deep_tree_does_not_hit_recursion_limit(self, pset):
        depth = 20000
        text = "Neg " * depth + "x"
        expr = parse_prefix(text, pset)
        assert evaluate(expr, {"x": 1.0}) == 1.0
        assert print_prefix(expr) == text


class TestResolveConstants:
    def test_full_resolution(self, pset):
        expr = parse_prefix("Add Mul k x z", pset)
        resolved = resolve_constants(expr, {"k": -27.84})
        assert print_prefix(resolved) == "Add Mul -27.84 x z"
        assert evaluate(resolved, {"x": 10.0, "z": 5.0}) == pytest.approx(-273.4)

    def test_partial_resolution_keeps_unknowns_symbolic(self):
        pset = build_pset({"Add": 2}, ["x"], ["a", "b"])
        expr = parse_prefix("Add a b", pset)
        resolved = resolve_constants(expr, {"a": 2.0})
        assert print_prefix(resolved) == "Add 2.0 b"

    def test_no_values_returns_same_object(self, pset):
        expr = parse_prefix("Add x y", pset)
        assert resolve_constants(expr, {}) is expr

    def test_argument_names_are_not_resolved(self, pset):
        expr = parse_prefix("Add x k", pset)
        resolved = resolve_constants(expr, {"x": 9.0, "k": 2.0})
        assert print_prefix(resolved) == "Add x 2.0"

    def test_constant_names(self, pset):
        assert constant_names(parse_prefix("Add Mul k x z", pset)) == ("k",)
        assert constant_names(parse_prefix("Add x z", pset)) == ()


class TestCompileCallable:
    def test_matches_evaluate_on_published_laws(self, pset):
        rng = random.Random(7)
        for text, _ in KNOWN_LENGTHS:
            expr = parse_prefix(text, pset)
            fn = compile_callable(expr, ("x", "y", "z"), {"k": -27.84})
            for _ in range(25):
                point = {name: rng.uniform(-30, 30) for name in ("x", "y", "z")}
                expected = evaluate(expr, point, {"k": -27.84})
                got = fn(point["x"], point["y"], point["z"])
                if math.isnan(expected):
                    assert math.isnan(got)
                else:
                    assert got == expected, text

    def test_default_constant_is_one(self, pset):
        expr = parse_prefix("Mul k x", pset)
        fn = compile_callable(expr, ("x", "y", "z"))
        assert fn(4.0, 0.0, 0.0) == 4.0

    def test_guarded_overflow(self, pset):
        fn = compile_callable(parse_prefix("Exp x", pset), ("x",))
        assert fn(1e4) == math.inf
        fn2 = compile_callable(parse_prefix("Sin Exp x", pset), ("x",))
        assert math.isnan(fn2(1e4))

    def test_unbound_terminal_raises_at_compile_time(self, pset):
        expr = parse_prefix("Add x w", build_pset(FUNCTIONS, ["x", "w"], []))
        with pytest.raises(EvaluationError):
            compile_callable(expr, ("x",))


class TestTreeSurgery:
    def test_node_at_preorder(self, pset):
        expr = parse_prefix("Add Mul k x z", pset)
        symbols = [node.symbol for node in iter_nodes(expr.root)]
        assert symbols == ["Add", "Mul", "k", "x", "z"]
        assert node_at(expr.root, 3).symbol == "x"
        with pytest.raises(IndexError):
            node_at(expr.root, 5)

    def test_replace_node(self, pset):
        expr = parse_prefix("Add Mul k x z", pset)
        out = replace_node(expr.root, 1, Node("y"))
        assert print_prefix(Expression(out, pset)) == "Add y z"

    def test_replace_root(self, pset):
        expr = parse_prefix("Add x y", pset)
        out = replace_node(expr.root, 0, Node("z"))
        assert out == Node("z")

    def test_replace_out_of_range(self, pset):
        expr = parse_prefix("Add x y", pset)
        with pytest.raises(IndexError):
            replace_node(expr.root, 3, Node("z"))


class TestGeneration:
    def test_heights_cover_ramp_and_stay_in_bounds(self, pset):
        rng = random.Random(0)
        heights = set()
        for _ in range(2000):
            expr = generate_half_and_half(pset, 1, 4, rng)
            h = height(expr)
            assert 1 <= h <= 4
            heights.add(h)
        assert heights == {1, 2, 3, 4}

    def test_full_trees_reach_min_height(self, pset):
        # With min == max every tree has exactly that height.
        rng = random.Random(1)
        for _ in range(300):
            assert height(generate_half_and_half(pset, 3, 3, rng)) == 3

    def test_grow_allows_short_trees(self, pset):
        rng = random.Random(2)
        hs = {height(generate_grow(pset, 0, 2, rng)) for _ in range(500)}
        assert 0 in hs and 2 in hs
        assert max(hs) <= 2

    def test_deterministic_for_equal_seeds(self, pset):
        def sample(seed):
            rng = random.Random(seed)
            return [
                print_prefix(generate_half_and_half(pset, 1, 4, rng))
                for _ in range(50)
            ]

        assert sample(99) == sample(99)
        assert sample(99) != sample(100)

    def test_all_symbols_come_from_pset(self, pset):
        rng = random.Random(3)
        names = set(FUNCTIONS) | {"x", "y", "z", "k"}
        for _ in range(200):
            expr = generate_half_and_half(pset, 1, 4, rng)
            assert {n.symbol for n in iter_nodes(expr.root)} <= names

    def test_terminal_only_pset_rejected(self):
        terminal_pset = build_pset({}, ["x"])
        with pytest.raises(PrimitiveSetError):
            generate_half_and_half(terminal_pset, 1, 2, random.Random(0))

    def test_bad_bounds_rejected(self, pset):
        with pytest.raises(ValueError):
            generate_half_and_half(pset, 0, 4, random.Random(0))
        with pytest.raises(ValueError):
            generate_half_and_half(pset, 3, 2, random.Random(0))


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_print_parse_round_trip(seed):
    """parse(print(tree)) reproduces the tree exactly."""
    pset = build_pset(FUNCTIONS, ["x", "y", "z"], ["k"])
    rng = random.Random(seed)
    expr = generate_half_and_half(pset, 1, 4, rng)
    text = print_prefix(expr)
    again = parse_prefix(text, pset)
    assert again == expr
    assert print_prefix(again) == text


@settings(max_examples=200, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**32 - 1),
    value=st.floats(allow_nan=False, allow_infinity=False, width=64),
)
def test_literal_round_trip(seed, value):
    """Numeric literals survive print/parse bit-exactly via repr."""
    pset = build_pset(FUNCTIONS, ["x"], ["k"])
    expr = resolve_constants(parse_prefix("Mul k x", pset), {"k": value})
    again = parse_prefix(print_prefix(expr), pset)
    assert again.root.children[0].symbol == value
