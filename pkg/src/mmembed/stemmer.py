"""Porter stemmer, implemented from the classic published rule set.

Operates on lowercase tokens.  Within each step, only the longest matching
suffix is considered; if its condition fails, the step makes no change.
"""

_VOWELS = frozenset("aeiou")


def _is_consonant(word, i):
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return True if i == 0 else not _is_consonant(word, i - 1)
    return True


def _measure(stem):
    """Number of vowel->consonant transitions, the m of [C](VC)^m[V]."""
    i, n, m = 0, len(stem), 0
    while i < n and _is_consonant(stem, i):
        i += 1
    while i < n:
        while i < n and not _is_consonant(stem, i):
            i += 1
        if i >= n:
            break
        m += 1
        while i < n and _is_consonant(stem, i):
            i += 1
    return m


def _has_vowel(stem):
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word):
    return len(word) >= 2 and word[-1] == word[-2] and _is_consonant(word, len(word) - 1)


def _ends_cvc(word):
    n = len(word)
    if n < 3:
        return False
    return (_is_consonant(word, n - 3) and not _is_consonant(word, n - 2)
            and _is_consonant(word, n - 1) and word[-1] not in "wxy")


def _longest_rule(word, rules):
    """Pick the longest matching suffix; apply its condition; stop either way."""
    match = None
    for suffix, repl, cond in rules:
        if word.endswith(suffix) and (match is None or len(suffix) > len(match[0])):
            match = (suffix, repl, cond)
    if match is None:
        return word
    suffix, repl, cond = match
    stem = word[:-len(suffix)]
    if cond is None or cond(stem):
        return stem + repl
    return word


def _m_gt(threshold):
    return lambda stem: _measure(stem) > threshold


_STEP2 = [
    ("ational", "ate", _m_gt(0)), ("tional", "tion", _m_gt(0)),
    ("enci", "ence", _m_gt(0)), ("anci", "ance", _m_gt(0)),
    ("izer", "ize", _m_gt(0)), ("abli", "able", _m_gt(0)),
    ("alli", "al", _m_gt(0)), ("entli", "ent", _m_gt(0)),
    ("eli", "e", _m_gt(0)), ("ousli", "ous", _m_gt(0)),
    ("ization", "ize", _m_gt(0)), ("ation", "ate", _m_gt(0)),
    ("ator", "ate", _m_gt(0)), ("alism", "al", _m_gt(0)),
    ("iveness", "ive", _m_gt(0)), ("fulness", "ful", _m_gt(0)),
    ("ousness", "ous", _m_gt(0)), ("aliti", "al", _m_gt(0)),
    ("iviti", "ive", _m_gt(0)), ("biliti", "ble", _m_gt(0)),
]

_STEP3 = [
    ("icate", "ic", _m_gt(0)), ("ative", "", _m_gt(0)), ("alize", "al", _m_gt(0)),
    ("iciti", "ic", _m_gt(0)), ("ical", "ic", _m_gt(0)),
    ("ful", "", _m_gt(0)), ("ness", "", _m_gt(0)),
]

_STEP4 = [
    ("al", "", _m_gt(1)), ("ance", "", _m_gt(1)), ("ence", "", _m_gt(1)),
    ("er", "", _m_gt(1)), ("ic", "", _m_gt(1)), ("able", "", _m_gt(1)),
    ("ible", "", _m_gt(1)), ("ant", "", _m_gt(1)), ("ement", "", _m_gt(1)),
    ("ment", "", _m_gt(1)), ("ent", "", _m_gt(1)),
    ("ion", "", lambda s: _measure(s) > 1 and s[-1:] in ("s", "t")),
    ("ou", "", _m_gt(1)), ("ism", "", _m_gt(1)), ("ate", "", _m_gt(1)),
    ("iti", "", _m_gt(1)), ("ous", "", _m_gt(1)), ("ive", "", _m_gt(1)),
    ("ize", "", _m_gt(1)),
]


def _step1a(word):
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith("ies"):
        return word[:-3] + "i"
    if word.endswith("ss"):
        return word
    if word.endswith("s"):
        return word[:-1]
    return word


def _step1b(word):
    if word.endswith("eed"):
        return word[:-1] if _measure(word[:-3]) > 0 else word
    if word.endswith("ed") and _has_vowel(word[:-2]):
        word = word[:-2]
    elif word.endswith("ing") and _has_vowel(word[:-3]):
        word = word[:-3]
    else:
        return word
    # cleanup after a removed -ed / -ing
    if word.endswith(("at", "bl", "iz")):
        return word + "e"
    if _ends_double_consonant(word) and word[-1] not in "lsz":
        return word[:-1]
    if _measure(word) == 1 and _ends_cvc(word):
        return word + "e"
    return word


def _step1c(word):
    if word.endswith("y") and _has_vowel(word[:-1]):
        return word[:-1] + "i"
    return word


def _step5a(word):
    if word.endswith("e"):
        stem = word[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            return stem
    return word


def _step5b(word):
    if _measure(word) > 1 and _ends_double_consonant(word) and word.endswith("l"):
        return word[:-1]
    return word


def stem(word):
    """Stem one lowercase token; non-letters pass through as consonants."""
    word = _step1a(word)
    word = _step1b(word)
    word = _step1c(word)
    word = _longest_rule(word, _STEP2)
    word = _longest_rule(word, _STEP3)
    word = _longest_rule(word, _STEP4)
    word = _step5a(word)
    word = _step5b(word)
    return word
