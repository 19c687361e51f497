"""Tokenization and heuristic entity recognition over the raw text side.

The tokenizer mirrors the trainer's contract exactly (whitespace split,
edge punctuation stripped, lowercased) so text tokens and entity surfaces
share one embedding space downstream.

Entity recognition is a deterministic stand-in for an NER service:
capitalization runs plus small gazetteers for person/location, and a
stopword-filtered noun approximation for the general context class.
"""

from __future__ import annotations

_PUNCT = ".,;:!?\"'()[]{}"


def tokenize(text: str) -> list[str]:
    out = []
    for raw in text.split():
        tok = raw.strip(_PUNCT).lower()
        if tok:
            out.append(tok)
    return out


def _cased_tokens(text: str) -> list[str]:
    # same split and edge stripping, case preserved for capitalization cues
    out = []
    for raw in text.split():
        tok = raw.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


_HONORIFICS = frozenset("""
mr mrs ms dr prof president mayor senator governor coach officer judge
chief minister sheriff captain general reverend
""".split())

# multi-word place names checked before the person bigram rule
_PLACES_MULTI = frozenset([
    "new york", "new york city", "los angeles", "san francisco", "hong kong",
    "new delhi", "rio de janeiro", "buenos aires", "kuala lumpur", "cape town",
    "tel aviv", "abu dhabi", "las vegas", "new orleans", "san diego",
    "mexico city", "sao paulo", "saint petersburg", "north korea", "south korea",
    "new zealand", "south africa", "saudi arabia", "sri lanka", "costa rica",
    "united states", "united kingdom", "puerto rico",
])

_PLACES = frozenset("""
london paris tokyo beijing moscow berlin madrid rome vienna amsterdam
brussels dublin lisbon athens cairo istanbul dubai mumbai delhi bangkok
singapore sydney melbourne toronto vancouver chicago boston houston dallas
seattle denver miami atlanta philadelphia phoenix detroit baltimore
washington ottawa havana lima bogota santiago caracas lagos nairobi
johannesburg casablanca karachi dhaka manila jakarta seoul shanghai
shenzhen taipei kyoto osaka munich hamburg frankfurt zurich geneva oslo
stockholm copenhagen helsinki warsaw prague budapest bucharest belgrade
kiev minsk riga vilnius tallinn reykjavik texas california florida ohio
oregon arizona nevada utah kansas iowa georgia virginia maryland
france germany spain italy portugal greece turkey egypt kenya nigeria
brazil argentina chile peru mexico canada japan china india russia
australia austria belgium denmark finland hungary iceland ireland norway
poland sweden switzerland thailand vietnam ukraine
""".split())

_GIVEN_NAMES = frozenset("""
james john robert michael william david richard joseph thomas charles
mary patricia jennifer linda elizabeth barbara susan jessica sarah karen
daniel matthew anthony mark donald steven paul andrew joshua kenneth
kevin brian george timothy ronald edward jason jeffrey ryan jacob gary
nancy lisa betty margaret sandra ashley kimberly emily donna michelle
carol amanda dorothy melissa deborah stephanie rebecca sharon laura
cynthia amy kathleen angela shirley anna brenda pamela emma olivia
noah liam mason lucas ethan aiden carlos miguel diego sofia lucia
maria ana juan pedro pablo marco ahmed omar fatima aisha wei ming
hiroshi yuki ivan dmitri olga natasha raj priya arjun
""".split())

_STOPWORDS = frozenset("""
a an the and or but if while with without within into onto from to of in
on at by for as is are was were be been being am do does did done doing
have has had having will would shall should may might must can could
this that these those there here it its itself he him his she her hers
they them their theirs we us our ours you your yours i me my mine who
whom whose which what when where why how not no nor so too very just
than then once only own same such both each few more most other some
any all s t don now about against between through during before after
above below up down out off over under again further near behind
beside among amid along across around outside inside despite until
""".split())


def _is_cap(token: str) -> bool:
    return token[:1].isupper() and token[1:].islower() and token.isalpha()


def extract_entities(text: str) -> list[dict]:
    """Heuristic NER: returns entity dicts in the corpus JSONL shape
    ({surface, kind, confidence}); confidence is always 1.0 on the text side."""
    cased = _cased_tokens(text)
    entities: list[dict] = []
    claimed: set[int] = set()

    # maximal runs of capitalized tokens
    runs: list[tuple[int, int]] = []
    i = 0
    while i < len(cased):
        if _is_cap(cased[i]):
            j = i
            while j + 1 < len(cased) and _is_cap(cased[j + 1]):
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1

    for start, end in runs:
        surface = [cased[t].lower() for t in range(start, end + 1)]
        span = range(start, end + 1)
        joined = " ".join(surface)
        if joined in _PLACES_MULTI:
            kind = "location"
        elif len(surface) >= 2:
            # drop a leading honorific from the person surface
            if surface[0] in _HONORIFICS:
                surface = surface[1:]
            kind = "person"
        elif surface[0] in _PLACES:
            kind = "location"
        elif surface[0] in _GIVEN_NAMES or (
            start > 0 and cased[start - 1].lower() in _HONORIFICS
        ):
            kind = "person"
        else:
            continue
        entities.append({"surface": surface, "kind": kind, "confidence": 1.0})
        claimed.update(span)

    # every remaining content word approximates the "all nouns" context class
    seen: set[str] = set()
    for pos, tok in enumerate(cased):
        if pos in claimed:
            continue
        low = tok.lower()
        if len(low) < 3 or not low.isalpha() or low in _STOPWORDS or low in seen:
            continue
        seen.add(low)
        entities.append({"surface": [low], "kind": "context", "confidence": 1.0})

    # drop exact duplicates while keeping first-occurrence order
    unique = []
    keys = set()
    for e in entities:
        key = (tuple(e["surface"]), e["kind"])
        if key not in keys:
            keys.add(key)
            unique.append(e)
    return unique
