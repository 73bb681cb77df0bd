"""Co-safe temporal formulas over named propositions, compiled to minimal DFAs.

Grammar (ASCII surface syntax; precedence low to high, U right-associative):

    formula := or_expr
    or_expr := and_expr ('|' and_expr)*
    and_expr := until_expr ('&' until_expr)*
    until_expr := unary ('U' until_expr)?
    unary := '!' atom | 'X' unary | 'F' unary | atom | 'true' | 'false'
           | '(' or_expr ')'

Negation applies to atoms only; ``F psi`` is stored desugared as
``true U psi``.  Letters are bitsets over the ordered proposition list, with
bit i standing for proposition i.

Acceptance is the bounded co-safe reading on finite words: an until must find
its witness inside the word, so the accepted words are exactly the good
prefixes under that reading, and acceptance is monotone under extension.  The
compiler steps formulas by letter derivatives, keeping each reachable state
as an antichain disjunctive normal form over the temporal leaves (canonical
for monotone combinations, hence finitely many states), then minimizes by
partition refinement.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np


class FormulaSyntaxError(ValueError):
    """Parse failure; ``position`` is the 0-based offset in the input text."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownAtomError(FormulaSyntaxError):
    pass


class StateBudgetError(RuntimeError):
    """Raised when DFA construction exceeds the configured location budget."""


# ---------------------------------------------------------------------------
# Formula AST


@dataclass(frozen=True)
class Formula:
    def __and__(self, other):
        return f_and([self, other])

    def __or__(self, other):
        return f_or([self, other])


@dataclass(frozen=True)
class TrueFormula(Formula):
    def __str__(self):
        return "true"


@dataclass(frozen=True)
class FalseFormula(Formula):
    def __str__(self):
        return "false"


@dataclass(frozen=True)
class Atom(Formula):
    index: int
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class NotAtom(Formula):
    index: int
    name: str

    def __str__(self):
        return f"!{self.name}"


@dataclass(frozen=True)
class And(Formula):
    children: tuple

    def __str__(self):
        return "(" + " & ".join(map(str, self.children)) + ")"


@dataclass(frozen=True)
class Or(Formula):
    children: tuple

    def __str__(self):
        return "(" + " | ".join(map(str, self.children)) + ")"


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left} U {self.right})"


@dataclass(frozen=True)
class Next(Formula):
    sub: Formula

    def __str__(self):
        return f"(X {self.sub})"


TRUE = TrueFormula()
FALSE = FalseFormula()

_KIND_RANK = {TrueFormula: 0, FalseFormula: 1, Atom: 2, NotAtom: 3, Next: 4, Until: 5, And: 6, Or: 7}


def _key(f: Formula):
    rank = _KIND_RANK[type(f)]
    if isinstance(f, (TrueFormula, FalseFormula)):
        return (rank,)
    if isinstance(f, (Atom, NotAtom)):
        return (rank, f.index)
    if isinstance(f, Next):
        return (rank, _key(f.sub))
    if isinstance(f, Until):
        return (rank, _key(f.left), _key(f.right))
    return (rank, tuple(_key(c) for c in f.children))


def f_and(children: Iterable[Formula]) -> Formula:
    flat = []
    for c in children:
        if isinstance(c, FalseFormula):
            return FALSE
        if isinstance(c, TrueFormula):
            continue
        if isinstance(c, And):
            flat.extend(c.children)
        else:
            flat.append(c)
    unique = sorted(set(flat), key=_key)
    if not unique:
        return TRUE
    if len(unique) == 1:
        return unique[0]
    return And(tuple(unique))


def f_or(children: Iterable[Formula]) -> Formula:
    flat = []
    for c in children:
        if isinstance(c, TrueFormula):
            return TRUE
        if isinstance(c, FalseFormula):
            continue
        if isinstance(c, Or):
            flat.extend(c.children)
        else:
            flat.append(c)
    unique = sorted(set(flat), key=_key)
    if not unique:
        return FALSE
    if len(unique) == 1:
        return unique[0]
    return Or(tuple(unique))


def f_until(left: Formula, right: Formula) -> Formula:
    if isinstance(right, (TrueFormula, FalseFormula)):
        return right
    if isinstance(left, FalseFormula):
        return right
    return Until(left, right)


def f_next(sub: Formula) -> Formula:
    if isinstance(sub, (TrueFormula, FalseFormula)):
        return sub
    return Next(sub)


def f_eventually(sub: Formula) -> Formula:
    return f_until(TRUE, sub)


# ---------------------------------------------------------------------------
# Parser

_TOKEN_RE = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[!&|()]))")
_RESERVED = {"U", "X", "F", "true", "false"}


class _Parser:
    def __init__(self, text: str, ap: Sequence[str]):
        self.text = text
        self.ap_index = {name: i for i, name in enumerate(ap)}
        self.tokens = self._tokenize(text)
        self.pos = 0

    @staticmethod
    def _tokenize(text: str):
        tokens = []
        i = 0
        while i < len(text):
            match = _TOKEN_RE.match(text, i)
            if match is None or match.end() == match.start():
                stripped = text[i:].lstrip()
                if not stripped:
                    break
                at = len(text) - len(stripped)
                raise FormulaSyntaxError(f"unexpected character {stripped[0]!r}", at)
            if match.group("name"):
                tokens.append((match.group("name"), match.start("name")))
            else:
                tokens.append((match.group("op"), match.start("op")))
            i = match.end()
        tokens.append(("<eof>", len(text)))
        return tokens

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value: str):
        tok, at = self.advance()
        if tok != value:
            raise FormulaSyntaxError(f"expected {value!r}, found {tok!r}", at)

    def parse(self) -> Formula:
        f = self.parse_or()
        tok, at = self.peek()
        if tok != "<eof>":
            raise FormulaSyntaxError(f"unexpected trailing input {tok!r}", at)
        return f

    def parse_or(self) -> Formula:
        parts = [self.parse_and()]
        while self.peek()[0] == "|":
            self.advance()
            parts.append(self.parse_and())
        return f_or(parts)

    def parse_and(self) -> Formula:
        parts = [self.parse_until()]
        while self.peek()[0] == "&":
            self.advance()
            parts.append(self.parse_until())
        return f_and(parts)

    def parse_until(self) -> Formula:
        left = self.parse_unary()
        if self.peek()[0] == "U":
            self.advance()
            right = self.parse_until()
            return f_until(left, right)
        return left

    def parse_unary(self) -> Formula:
        tok, at = self.peek()
        if tok == "!":
            self.advance()
            name, name_at = self.advance()
            if name in _RESERVED or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
                raise FormulaSyntaxError("negation is allowed on atoms only", name_at)
            return NotAtom(self._atom_index(name, name_at), name)
        if tok == "X":
            self.advance()
            return f_next(self.parse_unary())
        if tok == "F":
            self.advance()
            return f_eventually(self.parse_unary())
        if tok == "(":
            self.advance()
            inner = self.parse_or()
            self.expect(")")
            return inner
        if tok == "true":
            self.advance()
            return TRUE
        if tok == "false":
            self.advance()
            return FALSE
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok) and tok not in _RESERVED:
            self.advance()
            return Atom(self._atom_index(tok, at), tok)
        raise FormulaSyntaxError(f"expected a formula, found {tok!r}", at)

    def _atom_index(self, name: str, at: int) -> int:
        try:
            return self.ap_index[name]
        except KeyError:
            raise UnknownAtomError(f"unknown proposition {name!r}", at) from None


def parse_formula(text: str, ap: Sequence[str]) -> Formula:
    """Parse and canonicalize a co-safe formula over the ordered propositions."""
    ap = list(ap)
    if len(set(ap)) != len(ap):
        raise ValueError("duplicate proposition names")
    for name in ap:
        if name in _RESERVED or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise ValueError(f"invalid proposition name {name!r}")
    return _Parser(text, ap).parse()


# ---------------------------------------------------------------------------
# Bounded-semantics oracle


def good_prefix_oracle(f: Formula, word: Sequence[int]) -> bool:
    """Evaluate the bounded co-safe semantics of ``f`` on a finite letter word.

    Independent recursive evaluator (no automata), used as the compiler's
    test oracle: untils and nexts must find their witnesses inside the word.
    """
    word = list(word)
    n = len(word)
    memo: dict = {}

    def sat(g: Formula, i: int) -> bool:
        key = (g, i)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if isinstance(g, TrueFormula):
            value = True
        elif isinstance(g, FalseFormula):
            value = False
        elif isinstance(g, Atom):
            value = i < n and bool((word[i] >> g.index) & 1)
        elif isinstance(g, NotAtom):
            value = i < n and not ((word[i] >> g.index) & 1)
        elif isinstance(g, And):
            value = all(sat(c, i) for c in g.children)
        elif isinstance(g, Or):
            value = any(sat(c, i) for c in g.children)
        elif isinstance(g, Next):
            value = sat(g.sub, i + 1)
        elif isinstance(g, Until):
            value = False
            for j in range(i, n):
                if sat(g.right, j):
                    value = True
                    break
                if not sat(g.left, j):
                    break
        else:  # pragma: no cover
            raise TypeError(f"unknown formula node {type(g)}")
        memo[key] = value
        return value

    return sat(f, 0)


# ---------------------------------------------------------------------------
# DFA


@dataclass(frozen=True)
class Dfa:
    """Total deterministic automaton over the alphabet 2^AP (dense letters)."""

    ap: tuple
    q0: int
    accepting: frozenset
    delta: np.ndarray  # (n, 2^|AP|) int32

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=np.int32)
        if delta.ndim != 2 or delta.shape[1] != 1 << len(self.ap):
            raise ValueError("delta must have shape (n, 2^|AP|)")
        if np.any(delta < 0) or np.any(delta >= delta.shape[0]):
            raise ValueError("delta targets out of range")
        object.__setattr__(self, "ap", tuple(self.ap))
        object.__setattr__(self, "accepting", frozenset(int(q) for q in self.accepting))
        object.__setattr__(self, "delta", delta)

    @property
    def n(self) -> int:
        return self.delta.shape[0]

    @property
    def num_letters(self) -> int:
        return self.delta.shape[1]

    def step(self, q: int, letter: int) -> int:
        return int(self.delta[q, letter])

    def run(self, word: Iterable[int]) -> int:
        q = self.q0
        for letter in word:
            q = int(self.delta[q, letter])
        return q

    def accepts(self, word: Iterable[int]) -> bool:
        return self.run(word) in self.accepting

    def indicator(self) -> np.ndarray:
        """1_F as a float vector over locations."""
        out = np.zeros(self.n)
        out[list(self.accepting)] = 1.0
        return out


# Antichain DNF over temporal leaves: frozenset of frozensets of base nodes.
_TOP = frozenset({frozenset()})
_BOT = frozenset()


def _absorb(clauses) -> frozenset:
    clauses = sorted(set(clauses), key=len)
    kept = []
    for c in clauses:
        if not any(k <= c for k in kept):
            kept.append(c)
    return frozenset(kept)


def _dnf_or(a: frozenset, b: frozenset) -> frozenset:
    if a == _TOP or b == _TOP:
        return _TOP
    return _absorb(a | b)


def _dnf_and(a: frozenset, b: frozenset) -> frozenset:
    if a == _BOT or b == _BOT:
        return _BOT
    return _absorb(x | y for x in a for y in b)


def _to_dnf(f: Formula) -> frozenset:
    if isinstance(f, TrueFormula):
        return _TOP
    if isinstance(f, FalseFormula):
        return _BOT
    if isinstance(f, And):
        return reduce(_dnf_and, (_to_dnf(c) for c in f.children), _TOP)
    if isinstance(f, Or):
        return reduce(_dnf_or, (_to_dnf(c) for c in f.children), _BOT)
    return frozenset({frozenset({f})})


def _derive(f: Formula, letter: int) -> frozenset:
    """DNF of the formula that the remaining suffix must satisfy after ``letter``."""
    if isinstance(f, TrueFormula):
        return _TOP
    if isinstance(f, FalseFormula):
        return _BOT
    if isinstance(f, Atom):
        return _TOP if (letter >> f.index) & 1 else _BOT
    if isinstance(f, NotAtom):
        return _BOT if (letter >> f.index) & 1 else _TOP
    if isinstance(f, And):
        return reduce(_dnf_and, (_derive(c, letter) for c in f.children), _TOP)
    if isinstance(f, Or):
        return reduce(_dnf_or, (_derive(c, letter) for c in f.children), _BOT)
    if isinstance(f, Next):
        return _to_dnf(f.sub)
    if isinstance(f, Until):
        keep = _dnf_and(_derive(f.left, letter), frozenset({frozenset({f})}))
        return _dnf_or(_derive(f.right, letter), keep)
    raise TypeError(f"unknown formula node {type(f)}")  # pragma: no cover


def _derive_state(state: frozenset, letter: int, base_memo: dict) -> frozenset:
    result = _BOT
    for clause in state:
        acc = _TOP
        for base in clause:
            key = (base, letter)
            d = base_memo.get(key)
            if d is None:
                d = _derive(base, letter)
                base_memo[key] = d
            acc = _dnf_and(acc, d)
            if acc == _BOT:
                break
        result = _dnf_or(result, acc)
        if result == _TOP:
            break
    return result


def compile_to_dfa(f: Formula, ap: Sequence[str], max_states: int = 10**6) -> Dfa:
    """Compile a canonical formula to the minimal DFA of its good prefixes."""
    ap = tuple(ap)
    if len(ap) > 16:
        raise ValueError("explicit alphabets are capped at 16 propositions")
    num_letters = 1 << len(ap)

    base_memo: dict = {}
    start = _to_dnf(f)
    index: dict = {start: 0}
    rows = []
    queue = [start]
    order = [start]
    head = 0
    while head < len(order):
        state = order[head]
        head += 1
        row = np.empty(num_letters, dtype=np.int32)
        for letter in range(num_letters):
            nxt = _derive_state(state, letter, base_memo)
            j = index.get(nxt)
            if j is None:
                j = len(order)
                if j >= max_states:
                    raise StateBudgetError(f"DFA construction exceeded {max_states} locations")
                index[nxt] = j
                order.append(nxt)
            row[letter] = j
        rows.append(row)

    delta = np.array(rows, dtype=np.int32)
    accepting = {index[_TOP]} if _TOP in index else set()
    return _minimize(Dfa(ap=ap, q0=0, accepting=frozenset(accepting), delta=delta))


def _minimize(dfa: Dfa) -> Dfa:
    """Partition refinement (Moore) followed by canonical BFS renumbering."""
    n = dfa.n
    block = np.zeros(n, dtype=np.int64)
    for q in dfa.accepting:
        block[q] = 1
    while True:
        signatures = {}
        new_block = np.empty(n, dtype=np.int64)
        for q in range(n):
            sig = (block[q], tuple(block[dfa.delta[q]]))
            new_block[q] = signatures.setdefault(sig, len(signatures))
        if len(signatures) == len(set(block.tolist())):
            break  # refinement only ever splits blocks, so equal count = stable
        block = new_block

    # canonical numbering: BFS from the initial block, letters ascending
    rep = {}
    for q in range(n):
        rep.setdefault(int(block[q]), q)
    renumber = {int(block[dfa.q0]): 0}
    frontier = [int(block[dfa.q0])]
    while frontier:
        b = frontier.pop(0)
        for letter in range(dfa.num_letters):
            nb = int(block[dfa.delta[rep[b], letter]])
            if nb not in renumber:
                renumber[nb] = len(renumber)
                frontier.append(nb)

    m = len(renumber)
    delta = np.empty((m, dfa.num_letters), dtype=np.int32)
    for b, new_q in renumber.items():
        delta[new_q] = [renumber[int(block[t])] for t in dfa.delta[rep[b]]]
    accepting = frozenset(
        renumber[int(block[q])] for q in dfa.accepting if int(block[q]) in renumber
    )
    return Dfa(ap=dfa.ap, q0=0, accepting=accepting, delta=delta)


# ---------------------------------------------------------------------------
# Export / import


def letter_to_names(letter: int, ap: Sequence[str]) -> str:
    names = [name for i, name in enumerate(ap) if (letter >> i) & 1]
    return "{" + ",".join(names) + "}"


def export_dfa(dfa: Dfa, format: str = "json") -> str:
    """Serialize a DFA: lossless JSON or Graphviz DOT for inspection."""
    if format == "json":
        payload = {
            "ap": list(dfa.ap),
            "n": dfa.n,
            "q0": dfa.q0,
            "accepting": sorted(dfa.accepting),
            "delta": dfa.delta.reshape(-1).tolist(),
        }
        return json.dumps(payload, indent=2, sort_keys=True)
    if format == "dot":
        lines = ["digraph dfa {", "  rankdir=LR;", '  __start [shape=point, label=""];']
        for q in range(dfa.n):
            shape = "doublecircle" if q in dfa.accepting else "circle"
            lines.append(f"  q{q} [shape={shape}, label=\"{q}\"];")
        lines.append(f"  __start -> q{dfa.q0};")
        for q in range(dfa.n):
            grouped: dict = {}
            for letter in range(dfa.num_letters):
                grouped.setdefault(int(dfa.delta[q, letter]), []).append(letter)
            for target in sorted(grouped):
                label = " | ".join(letter_to_names(l, dfa.ap) for l in grouped[target])
                lines.append(f"  q{q} -> q{target} [label=\"{label}\"];")
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown export format {format!r}")


def import_dfa(text: str) -> Dfa:
    payload = json.loads(text)
    ap = tuple(payload["ap"])
    n = int(payload["n"])
    flat = payload["delta"]
    num_letters = 1 << len(ap)
    if len(flat) != n * num_letters:
        raise ValueError("delta table has the wrong length")
    delta = np.asarray(flat, dtype=np.int32).reshape(n, num_letters)
    return Dfa(ap=ap, q0=int(payload["q0"]), accepting=frozenset(payload["accepting"]), delta=delta)
