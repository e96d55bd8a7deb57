"""
Fuzzy name matching for "did you mean" hints on config keys and problem names
"""

from typing import Iterable, Optional

from rapidfuzz import fuzz, process

# Only suggest reasonably close names
MATCH_THRESHOLD = 60


def closest_match(word: str, choices: Iterable[str], threshold: int = MATCH_THRESHOLD) -> Optional[str]:
    """Best fuzzy match for word among choices, or None below threshold"""
    choices = list(choices)
    if not choices:
        return None
    best = process.extractOne(word.lower(), choices, scorer=fuzz.WRatio)
    if best is None or best[1] < threshold:
        return None
    return best[0]


def unknown_name_message(kind: str, word: str, choices: Iterable[str]) -> str:
    choices = sorted(choices)
    hint = closest_match(word, choices)
    message = f"unknown {kind} {word!r}"
    if hint:
        message += f" (did you mean {hint!r}?)"
    return message + f"; choose from: {', '.join(choices)}"
