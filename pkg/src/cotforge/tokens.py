"""Deterministic, locale-independent tokenizer used for all length accounting.

Tokens are maximal non-whitespace runs, except that each CJK codepoint counts
as a token of its own (Han ideographs and kana carry no word boundaries).
"""

from __future__ import annotations

_CJK_RANGES = (
    (0x3040, 0x30FF),  # hiragana, katakana
    (0x3400, 0x4DBF),  # CJK extension A
    (0x4E00, 0x9FFF),  # CJK unified ideographs
    (0xF900, 0xFAFF),  # CJK compatibility ideographs
    (0x20000, 0x2FFFF),  # CJK extensions B and beyond
)


def _is_cjk(codepoint: int) -> bool:
    return any(lo <= codepoint <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> list[str]:
    tokens: list[str] = []
    run: list[str] = []
    for ch in text:
        if ch.isspace():
            if run:
                tokens.append("".join(run))
                run = []
        elif _is_cjk(ord(ch)):
            if run:
                tokens.append("".join(run))
                run = []
            tokens.append(ch)
        else:
            run.append(ch)
    if run:
        tokens.append("".join(run))
    return tokens


def count_tokens(text: str) -> int:
    return len(tokenize(text))
