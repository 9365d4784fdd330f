"""Word arithmetic for free groups and free products of finite cyclic groups.

Elements are stored as tuples of *tokens*. For a free group a token is a
letter (generator or inverse); for a free product a token is a syllable
``x_i^e`` with ``1 <= e < m_i``. In both cases the reduced word is the unique
geodesic normal form, so the word metric is exact.

Right multiplication by one token only ever touches the end of the word: the
outcome is PUSH, POP, or REPLACE the last token. ``GroupModel.action`` tabulates
this so that the vectorised walk engine can use it directly.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import Overflow, UnknownLetter, ValidationError

PUSH = -2
POP = -1

_INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class GeneratorAlphabet:
    names: tuple[str, ...]
    inverse: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.inverse):
            raise ValidationError("alphabet names and inverse table differ in length")
        n = len(self.names)
        for i, j in enumerate(self.inverse):
            if not 0 <= j < n or self.inverse[j] != i:
                raise ValidationError(f"inverse table is not an involution at letter {self.names[i]}")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownLetter(name) from None


@dataclass(frozen=True)
class GroupModel:
    """A free group ``F_k`` or a free product ``Z_m1 * ... * Z_mr``."""

    kind: str
    rank: int = 0
    orders: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind == "free":
            if self.rank < 2:
                raise ValidationError("free group must have rank >= 2 to be non-elementary")
            if self.rank > 26:
                raise ValidationError("free group rank is limited to 26 letters")
        elif self.kind == "freeproduct":
            if len(self.orders) < 2 or any(m < 2 for m in self.orders):
                raise ValidationError("free product needs at least two cyclic factors of order >= 2")
            if tuple(self.orders) == (2, 2):
                raise ValidationError("Z2*Z2 is virtually cyclic (elementary)")
        else:
            raise ValidationError(f"unknown group kind {self.kind!r}")

    @classmethod
    def free(cls, k: int) -> "GroupModel":
        return cls("free", rank=k)

    @classmethod
    def free_product(cls, *orders: int) -> "GroupModel":
        return cls("freeproduct", orders=tuple(orders))

    @classmethod
    def parse(cls, text: str) -> "GroupModel":
        """Parse ``free:2`` or ``freeproduct:3,3``."""
        kind, _, rest = text.strip().partition(":")
        try:
            if kind == "free":
                return cls.free(int(rest))
            if kind == "freeproduct":
                return cls.free_product(*(int(t) for t in rest.split(",")))
        except ValueError:
            pass
        if kind in ("free", "freeproduct"):
            raise ValidationError(f"cannot parse group description {text!r}")
        raise ValidationError(f"unknown group kind in {text!r}")

    def __str__(self):
        if self.kind == "free":
            return f"free:{self.rank}"
        return "freeproduct:" + ",".join(map(str, self.orders))

    @property
    def is_free(self) -> bool:
        return self.kind == "free"

    # -- tokens -----------------------------------------------------------

    @cached_property
    def tokens(self) -> tuple[tuple[int, int], ...]:
        """Token descriptors ``(factor, exponent)``.

        Free group: letter ``2i`` is ``(i, +1)`` and ``2i+1`` is ``(i, -1)``.
        """
        if self.is_free:
            return tuple((i, e) for i in range(self.rank) for e in (1, -1))
        return tuple((i, e) for i, m in enumerate(self.orders) for e in range(1, m))

    @cached_property
    def token_names(self) -> tuple[str, ...]:
        if self.is_free:
            out = []
            for i, e in self.tokens:
                c = chr(ord("a") + i)
                out.append(c if e > 0 else c.upper())
            return tuple(out)
        return tuple(f"x{i + 1}" if e == 1 else f"x{i + 1}^{e}" for i, e in self.tokens)

    @cached_property
    def _token_index(self) -> dict[tuple[int, int], int]:
        return {t: j for j, t in enumerate(self.tokens)}

    @cached_property
    def token_inverse(self) -> np.ndarray:
        if self.is_free:
            inv = [j ^ 1 for j in range(len(self.tokens))]
        else:
            inv = [self._token_index[(i, self.orders[i] - e)] for i, e in self.tokens]
        return np.array(inv, dtype=np.int64)

    @cached_property
    def token_length(self) -> np.ndarray:
        """Word-metric length of each token."""
        if self.is_free:
            return np.ones(len(self.tokens))
        return np.array([min(e, self.orders[i] - e) for i, e in self.tokens], dtype=float)

    # -- letters (the symmetric generating set S) --------------------------

    @cached_property
    def letter_tokens(self) -> tuple[int, ...]:
        if self.is_free:
            return tuple(range(2 * self.rank))
        out = []
        for i, m in enumerate(self.orders):
            out.append(self._token_index[(i, 1)])
            if m > 2:
                out.append(self._token_index[(i, m - 1)])
        return tuple(out)

    @cached_property
    def alphabet(self) -> GeneratorAlphabet:
        toks = self.letter_tokens
        names = tuple(self.token_names[t] for t in toks)
        inv = tuple(toks.index(int(self.token_inverse[t])) for t in toks)
        return GeneratorAlphabet(names, inv)

    @cached_property
    def action(self) -> np.ndarray:
        """``action[top, letter]`` for right multiplication; row ``T`` is the empty word.

        Entries are PUSH, POP or the replacement token id.
        """
        T = len(self.tokens)
        table = np.full((T + 1, len(self.letter_tokens)), PUSH, dtype=np.int64)
        for top in range(T):
            for a, tok in enumerate(self.letter_tokens):
                table[top, a] = self._combine(top, tok)
        return table

    @cached_property
    def has_replacements(self) -> bool:
        return bool((self.action >= 0).any())

    def _combine(self, top: int, tok: int) -> int:
        if self.is_free:
            return POP if tok == self.token_inverse[top] else PUSH
        fi, ei = self.tokens[top]
        fj, ej = self.tokens[tok]
        if fi != fj:
            return PUSH
        e = (ei + ej) % self.orders[fi]
        return POP if e == 0 else self._token_index[(fi, e)]

    # -- elements ---------------------------------------------------------

    @property
    def identity(self) -> "GroupElement":
        return GroupElement(self, ())

    def _append(self, word: list[int], tok: int) -> None:
        if not word:
            word.append(tok)
            return
        act = self._combine(word[-1], tok)
        if act == PUSH:
            word.append(tok)
        elif act == POP:
            word.pop()
        else:
            word[-1] = act

    def from_tokens(self, toks: Iterable[int]) -> "GroupElement":
        word: list[int] = []
        T = len(self.tokens)
        for t in toks:
            t = int(t)
            if not 0 <= t < T:
                raise UnknownLetter(t)
            self._append(word, t)
        return GroupElement(self, tuple(word))

    def from_letters(self, letters: Iterable[int]) -> "GroupElement":
        toks = self.letter_tokens
        out = []
        for a in letters:
            a = int(a)
            if not 0 <= a < len(toks):
                raise UnknownLetter(a)
            out.append(toks[a])
        return self.from_tokens(out)

    def parse_tokens(self, text: str) -> list[int]:
        """Parse a written word into a list of (unreduced) tokens."""
        text = text.strip()
        if text in ("", "id", "e", "1"):
            return []
        out: list[int] = []
        if self.is_free:
            pos = 0
            pat = re.compile(r"\s*([A-Za-z])(\^-1|⁻¹|\^1)?\s*")
            while pos < len(text):
                mt = pat.match(text, pos)
                if not mt:
                    raise UnknownLetter(text[pos:])
                c, inv = mt.group(1), mt.group(2)
                i = ord(c.lower()) - ord("a")
                if i >= self.rank:
                    raise UnknownLetter(c)
                neg = c.isupper() ^ (inv is not None and inv != "^1")
                out.append(2 * i + (1 if neg else 0))
                pos = mt.end()
            return out
        pat = re.compile(r"\s*x(\d+)(?:\^(-?\d+))?\s*")
        pos = 0
        while pos < len(text):
            mt = pat.match(text, pos)
            if not mt:
                raise UnknownLetter(text[pos:])
            i = int(mt.group(1)) - 1
            if not 0 <= i < len(self.orders):
                raise UnknownLetter(mt.group(0).strip())
            e = int(mt.group(2) or 1) % self.orders[i]
            if e:
                out.append(self._token_index[(i, e)])
            pos = mt.end()
        return out

    def element(self, text: str) -> "GroupElement":
        return self.from_tokens(self.parse_tokens(text))


@dataclass(frozen=True)
class GroupElement:
    model: GroupModel = field(repr=False)
    word: tuple[int, ...]

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        return multiply(self, other)

    def inverse(self) -> "GroupElement":
        return invert(self)

    @property
    def is_identity(self) -> bool:
        return not self.word

    def __len__(self):
        return len(self.word)

    def __str__(self):
        if not self.word:
            return "id"
        names = self.model.token_names
        sep = "" if self.model.is_free else " "
        return sep.join(names[t] for t in self.word)


def reduce(raw: Sequence[str] | str, model: GroupModel) -> GroupElement:
    """Normal form of a product of letters given by name (or as one string)."""
    if isinstance(raw, str):
        return model.element(raw)
    toks: list[int] = []
    for sym in raw:
        toks.extend(model.parse_tokens(sym) if sym else [])
    return model.from_tokens(toks)


def multiply(x: GroupElement, y: GroupElement) -> GroupElement:
    model = x.model
    word = list(x.word)
    for t in y.word:
        model._append(word, t)
    return GroupElement(model, tuple(word))


def invert(x: GroupElement) -> GroupElement:
    inv = x.model.token_inverse
    return GroupElement(x.model, tuple(int(inv[t]) for t in reversed(x.word)))


def word_length(x: GroupElement) -> int:
    lengths = x.model.token_length
    return int(sum(lengths[t] for t in x.word))


def word_distance(x: GroupElement, y: GroupElement) -> int:
    return word_length(multiply(invert(x), y))


def sphere_counts(model: GroupModel, r: int) -> list[int]:
    """Number of elements at each word length 0..r (exact Python integers)."""
    T = len(model.tokens)
    lengths = [int(v) for v in model.token_length]
    # compatible[t_prev][t]: appending t after t_prev keeps the word reduced
    compat = [[model._combine(p, t) == PUSH for t in range(T)] for p in range(T)]
    ending = [[0] * T for _ in range(r + 1)]
    for L in range(1, r + 1):
        for t in range(T):
            lt = lengths[t]
            if lt > L:
                continue
            if lt == L:
                ending[L][t] += 1
            else:
                ending[L][t] += sum(ending[L - lt][p] for p in range(T) if compat[p][t])
    return [1] + [sum(ending[L]) for L in range(1, r + 1)]


def ball_count(model: GroupModel, r: int) -> int:
    """#{x : |x| <= r} in the word metric."""
    if r < 0:
        raise ValidationError("radius must be nonnegative")
    total = sum(sphere_counts(model, r))
    if total > _INT64_MAX:
        raise Overflow(f"ball of radius {r} has more than 2^63-1 elements")
    return total


def growth_rate(model: GroupModel, r: int = 40) -> float:
    """Logarithmic volume growth v of the word metric.

    Exact ``log(2k-1)`` for free groups; otherwise the ratio of consecutive
    sphere sizes at radius ``r``.
    """
    if model.is_free:
        return float(np.log(2 * model.rank - 1))
    s = sphere_counts(model, r)
    # syllables of different lengths make sphere sizes oscillate; use a two-step ratio
    return float(np.log(sum(s[-2:]) / sum(s[-4:-2])) / 2)


def enumerate_ball(model: GroupModel, r: int, budget: int = 10**7) -> list[tuple[int, ...]]:
    """All normal forms of word length <= r, shortest first."""
    from .errors import BudgetExceeded

    size = ball_count(model, r)
    if size > budget:
        raise BudgetExceeded(size, budget, "ball")
    lengths = model.token_length
    out: list[tuple[int, ...]] = [()]
    frontier = [((), 0.0)]
    T = len(model.tokens)
    while frontier:
        nxt = []
        for w, L in frontier:
            for t in range(T):
                if w and model._combine(w[-1], t) != PUSH:
                    continue
                Lt = L + lengths[t]
                if Lt <= r:
                    nw = w + (t,)
                    nxt.append((nw, Lt))
                    out.append(nw)
        frontier = nxt
    out.sort(key=lambda w: (sum(lengths[t] for t in w), w))
    return out
