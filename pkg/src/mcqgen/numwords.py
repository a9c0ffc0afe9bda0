"""Number words <-> digits for English and Persian, 0 to 999,999.

The grammar is compositional: units, teens, tens, hundreds, one
thousands scale word, and conjunctions ("and", "و") between components.
Larger scales are left untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .core import fold_digits


@dataclass
class NumberLexicon:
    units: dict            # 1..9
    teens: dict            # 10..19
    tens: dict             # 20..90
    hundreds: dict         # whole-hundred words, e.g. "دویست" -> 200
    hundred: set           # multiplier word(s) taking a preceding unit
    thousand: set
    zero: set
    conj: set
    joiner: str = " "

    def __post_init__(self):
        self.vocab = (set(self.units) | set(self.teens) | set(self.tens) | set(self.hundreds)
                      | self.hundred | self.thousand | self.zero)


def _inv(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        out.setdefault(v, k)
    return out


ENGLISH = NumberLexicon(
    units={w: i for i, w in enumerate(
        "one two three four five six seven eight nine".split(), start=1)},
    teens={w: i for i, w in enumerate(
        "ten eleven twelve thirteen fourteen fifteen sixteen seventeen eighteen nineteen".split(),
        start=10)},
    tens={w: 10 * i for i, w in enumerate(
        "twenty thirty forty fifty sixty seventy eighty ninety".split(), start=2)},
    hundreds={},
    hundred={"hundred"},
    thousand={"thousand"},
    zero={"zero"},
    conj={"and"},
)

PERSIAN = NumberLexicon(
    units={"یک": 1, "دو": 2, "سه": 3, "چهار": 4, "پنج": 5, "شش": 6, "شیش": 6,
           "هفت": 7, "هشت": 8, "نه": 9},
    teens={"ده": 10, "یازده": 11, "دوازده": 12, "سیزده": 13, "چهارده": 14, "پانزده": 15,
           "پونزده": 15, "شانزده": 16, "هفده": 17, "هجده": 18, "هیجده": 18, "نوزده": 19},
    tens={"بیست": 20, "سی": 30, "چهل": 40, "پنجاه": 50, "شصت": 60, "هفتاد": 70,
          "هشتاد": 80, "نود": 90},
    hundreds={"صد": 100, "یکصد": 100, "دویست": 200, "سیصد": 300, "چهارصد": 400,
              "پانصد": 500, "پونصد": 500, "ششصد": 600, "هفتصد": 700, "هشتصد": 800, "نهصد": 900},
    hundred=set(),
    thousand={"هزار"},
    zero={"صفر"},
    conj={"و"},
    joiner=" و ",
)

LEXICONS = {"en": ENGLISH, "fa": PERSIAN}


def _below100(toks, i, lex):
    """Yield (value, next_index) for a non-zero number below 100 starting at i."""
    if i >= len(toks):
        return
    t = toks[i]
    if t in lex.teens:
        yield lex.teens[t], i + 1
    elif t in lex.units:
        yield lex.units[t], i + 1
    elif t in lex.tens:
        yield lex.tens[t], i + 1
        j = i + 1
        if j < len(toks) and toks[j] in lex.conj:
            j += 1
        if j < len(toks) and toks[j] in lex.units:
            yield lex.tens[t] + lex.units[toks[j]], j + 1


def _below1000(toks, i, lex):
    if i >= len(toks):
        return
    heads = []
    t = toks[i]
    if t in lex.hundreds:
        heads.append((lex.hundreds[t], i + 1))
    if t in lex.hundred:
        heads.append((100, i + 1))
    if t in lex.units and i + 1 < len(toks) and toks[i + 1] in lex.hundred:
        heads.append((100 * lex.units[t], i + 2))
    for value, j in heads:
        yield value, j
        k = j + 1 if j < len(toks) and toks[j] in lex.conj else j
        for rest, m in _below100(toks, k, lex):
            yield value + rest, m
    yield from _below100(toks, i, lex)


def _number(toks, i, lex):
    if i < len(toks) and toks[i] in lex.zero:
        yield 0, i + 1
        return
    if i < len(toks) and toks[i] in lex.thousand:
        starts = [(1000, i + 1)]
    else:
        starts = []
    for value, j in _below1000(toks, i, lex):
        yield value, j
        if j < len(toks) and toks[j] in lex.thousand:
            starts.append((value * 1000, j + 1))
    for value, j in starts:
        yield value, j
        k = j + 1 if j < len(toks) and toks[j] in lex.conj else j
        for rest, m in _below1000(toks, k, lex):
            yield value + rest, m


def parse_number_words(tokens, lang: str = "en"):
    """Value of a token sequence that is exactly one number phrase, else None."""
    lex = LEXICONS[lang]
    toks = [t.casefold() for t in tokens]
    for value, j in _number(toks, 0, lex):
        if j == len(toks):
            return value
    return None


def number_to_words(n: int, lang: str = "en") -> str:
    if not 0 <= n <= 999_999:
        raise ValueError("supported range is 0..999999")
    lex = LEXICONS[lang]
    if n == 0:
        return _inv({w: 0 for w in lex.zero})[0]

    def below1000(m):
        parts = []
        h, rest = divmod(m, 100)
        if h:
            if lang == "fa":
                parts.append(_inv(lex.hundreds)[h * 100])
            else:
                parts.append(f"{_inv(lex.units)[h]} hundred")
        if rest:
            if rest < 10:
                parts.append(_inv(lex.units)[rest])
            elif rest < 20:
                parts.append(_inv(lex.teens)[rest])
            else:
                t, u = divmod(rest, 10)
                word = _inv(lex.tens)[t * 10]
                if u:
                    word += lex.joiner + _inv(lex.units)[u]
                parts.append(word)
        return lex.joiner.join(parts)

    thousands, rest = divmod(n, 1000)
    out = []
    if thousands:
        scale = next(iter(lex.thousand))
        if lang == "fa" and thousands == 1:
            out.append(scale)
        else:
            out.append(f"{below1000(thousands)} {scale}")
    if rest:
        out.append(below1000(rest))
    return lex.joiner.join(out)


_WORD = re.compile(r"[^\W\d_]+")
_GAP = re.compile(r"[\s\-]+")


def normalize_written_form(text: str, langs=("en", "fa")) -> str:
    """Rewrite number-word phrases in ``text`` as digit strings.

    Eastern-Arabic digits are folded to ASCII as well. Everything that is
    not part of a number phrase is left byte-for-byte as it was.
    """
    text = fold_digits(text)
    words = list(_WORD.finditer(text))
    if not words:
        return text
    pieces = []
    cursor = 0
    i = 0
    while i < len(words):
        best = None
        first = words[i].group().casefold()
        for lang in langs:
            lex = LEXICONS[lang]
            if first not in lex.vocab:
                continue
            # extend over number words and conjunctions separated by spaces/hyphens
            j = i + 1
            while (j < len(words) and _GAP.fullmatch(text[words[j - 1].end():words[j].start()])
                   and (words[j].group().casefold() in lex.vocab
                        or words[j].group().casefold() in lex.conj)):
                j += 1
            for end in range(j, i, -1):
                value = parse_number_words([w.group() for w in words[i:end]], lang)
                if value is not None:
                    if best is None or end > best[0]:
                        best = (end, value)
                    break
        if best is None:
            i += 1
            continue
        end, value = best
        pieces.append(text[cursor:words[i].start()])
        pieces.append(str(value))
        cursor = words[end - 1].end()
        i = end
    pieces.append(text[cursor:])
    return "".join(pieces)
