"""Boolean formula trees over concepts: evaluation, parsing, equivalence.

Formulas use the same 16 binary connectives as the gate kernel (boolean
corner semantics) plus unary NOT. The text format is prefix-functional,
e.g. ``XOR(c1,c2)`` or ``AND(NOT(XOR(c1,c2)),c3)``. Concept tokens are
resolved against an optional name list; without one, ``c<i>`` means the
0-based concept index i.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .errors import IndexOutOfRange, ParseError, TooManyConcepts
from .gates import gate_name_to_id, gate_table

MAX_EQUIV_CONCEPTS = 20

_CORNERS = tuple(d.truth_corners for d in gate_table())
_GATE_NAMES = tuple(d.name for d in gate_table())


@dataclass(frozen=True)
class ConceptRef:
    index: int


@dataclass(frozen=True)
class Not:
    child: "FormulaAst"


@dataclass(frozen=True)
class Binary:
    gate_id: int
    left: "FormulaAst"
    right: "FormulaAst"


FormulaAst = Union[ConceptRef, Not, Binary]


def formula_concepts(formula: FormulaAst) -> set[int]:
    """Set of concept indices referenced by the formula."""
    if isinstance(formula, ConceptRef):
        return {formula.index}
    if isinstance(formula, Not):
        return formula_concepts(formula.child)
    return formula_concepts(formula.left) | formula_concepts(formula.right)


def formula_eval(formula: FormulaAst, assignment: Sequence[int]) -> int:
    """Evaluate a formula on a binary assignment, returning 0 or 1."""
    if isinstance(formula, ConceptRef):
        if formula.index >= len(assignment) or formula.index < 0:
            raise IndexOutOfRange(
                f"concept index {formula.index} outside assignment of length {len(assignment)}"
            )
        return 1 if assignment[formula.index] else 0
    if isinstance(formula, Not):
        return 1 - formula_eval(formula.child, assignment)
    a = formula_eval(formula.left, assignment)
    b = formula_eval(formula.right, assignment)
    return _CORNERS[formula.gate_id][(a << 1) | b]


def formula_equivalent(f1: FormulaAst, f2: FormulaAst, k: int) -> bool:
    """True iff both formulas agree on all 2^k assignments."""
    if k > MAX_EQUIV_CONCEPTS:
        raise TooManyConcepts(f"k={k} exceeds brute-force bound {MAX_EQUIV_CONCEPTS}")
    for assignment in itertools.product((0, 1), repeat=k):
        if formula_eval(f1, assignment) != formula_eval(f2, assignment):
            return False
    return True


def satisfying_assignments(formula: FormulaAst, k: int) -> list[tuple[int, ...]]:
    """All assignments in {0,1}^k on which the formula evaluates to 1."""
    if k > MAX_EQUIV_CONCEPTS:
        raise TooManyConcepts(f"k={k} exceeds brute-force bound {MAX_EQUIV_CONCEPTS}")
    return [a for a in itertools.product((0, 1), repeat=k) if formula_eval(formula, a)]


# --- text format ---

_TOKEN_RE = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_:]*|\(|\)|,)")


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ParseError(f"unexpected character {text[pos]!r} at position {pos}")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens


def _resolve_concept(token: str, names: Optional[Sequence[str]]) -> int:
    if names is not None:
        try:
            return list(names).index(token)
        except ValueError:
            raise ParseError(f"unknown concept name {token!r}") from None
    m = re.fullmatch(r"c(\d+)", token)
    if m is None:
        raise ParseError(f"cannot resolve concept token {token!r} without a name table")
    return int(m.group(1))


def parse_formula(text: str, names: Optional[Sequence[str]] = None) -> FormulaAst:
    """Parse the prefix-functional formula syntax into an AST."""
    tokens = _tokenize(text)
    pos = 0

    def expect(tok: str) -> None:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != tok:
            found = tokens[pos] if pos < len(tokens) else "<end>"
            raise ParseError(f"expected {tok!r}, found {found!r}")
        pos += 1

    def parse_expr() -> FormulaAst:
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of formula")
        tok = tokens[pos]
        pos += 1
        upper = tok.upper()
        if upper == "NOT":
            expect("(")
            child = parse_expr()
            expect(")")
            return Not(child)
        if upper in _GATE_NAMES and pos < len(tokens) and tokens[pos] == "(":
            expect("(")
            left = parse_expr()
            expect(",")
            right = parse_expr()
            expect(")")
            return Binary(gate_name_to_id(upper), left, right)
        return ConceptRef(_resolve_concept(tok, names))

    ast = parse_expr()
    if pos != len(tokens):
        raise ParseError(f"trailing tokens starting at {tokens[pos]!r}")
    return ast


def format_formula(formula: FormulaAst, names: Optional[Sequence[str]] = None) -> str:
    """Render an AST back into the prefix text format."""
    if isinstance(formula, ConceptRef):
        return names[formula.index] if names is not None else f"c{formula.index}"
    if isinstance(formula, Not):
        return f"NOT({format_formula(formula.child, names)})"
    name = _GATE_NAMES[formula.gate_id]
    return f"{name}({format_formula(formula.left, names)},{format_formula(formula.right, names)})"


_INFIX = {
    1: "∧", 6: "⊕", 7: "∨", 13: "⇒", 11: "⇐",
}


def pretty_formula(formula: FormulaAst, names: Optional[Sequence[str]] = None) -> str:
    """Human-oriented infix rendering using the gate display symbols."""
    def name_of(i: int) -> str:
        return names[i] if names is not None else f"c{i}"

    if isinstance(formula, ConceptRef):
        return name_of(formula.index)
    if isinstance(formula, Not):
        return f"¬({pretty_formula(formula.child, names)})"
    gid = formula.gate_id
    left = pretty_formula(formula.left, names)
    right = pretty_formula(formula.right, names)
    if gid in _INFIX:
        return f"({left} {_INFIX[gid]} {right})"
    if gid == 0:
        return "False"
    if gid == 15:
        return "True"
    if gid == 3:
        return left
    if gid == 5:
        return right
    if gid == 12:
        return f"¬({left})"
    if gid == 10:
        return f"¬({right})"
    if gid == 2:
        return f"({left} ∧ ¬({right}))"
    if gid == 4:
        return f"(¬({left}) ∧ {right})"
    if gid == 8:
        return f"¬({left} ∨ {right})"
    if gid == 9:
        return f"¬({left} ⊕ {right})"
    if gid == 14:
        return f"¬({left} ∧ {right})"
    raise AssertionError(f"unhandled gate id {gid}")


def parse_rules_file(text: str, names: Optional[Sequence[str]] = None) -> list[tuple[str, FormulaAst]]:
    """Parse a rules file: one ``class_name: formula`` per line, # comments."""
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ParseError(f"line {lineno}: expected 'class_name: formula'")
        name, formula_text = line.split(":", 1)
        name = name.strip()
        if not name:
            raise ParseError(f"line {lineno}: empty class name")
        try:
            ast = parse_formula(formula_text, names)
        except ParseError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        rules.append((name, ast))
    return rules
