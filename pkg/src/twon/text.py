"""Tokenization shared by metrics, lexicons, and text generation.

Everything that counts tokens anywhere in the package goes through
tokenize() so the different surfaces can never disagree on boundaries.
"""

from __future__ import annotations

import unicodedata


def normalize(text: str) -> str:
    """NFC-normalize, so composed and decomposed forms compare equal."""
    return unicodedata.normalize("NFC", text)


def tokenize(text: str) -> list[str]:
    """Whitespace tokens of the NFC-normalized text."""
    return normalize(text).split()
