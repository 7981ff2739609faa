import random

from cotforge.tokens import count_tokens, tokenize


def test_empty():
    assert count_tokens("") == 0
    assert tokenize("") == []


def test_simple_whitespace_runs():
    assert count_tokens("one two  three") == 3
    assert tokenize("  a\tb\nc ") == ["a", "b", "c"]


def test_cjk_codepoints_are_single_tokens():
    assert tokenize("abc你好 def") == ["abc", "你", "好", "def"]
    assert count_tokens("日本語のテスト") == 7
    assert tokenize("混ざった mixed 文") == ["混", "ざ", "っ", "た", "mixed", "文"]


def test_ascii_matches_split_oracle():
    rng = random.Random(42)
    alphabet = "abcdefghijklmnopqrstuvwxyz0123456789.,;!? \t\n"
    for _ in range(500):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 120)))
        assert tokenize(text) == text.split()
        assert count_tokens(text) == len(text.split())
