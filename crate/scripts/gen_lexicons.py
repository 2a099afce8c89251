#!/usr/bin/env python3
"""Regenerate the bundled pseudo-language lexicons and transliteration tables.

The pseudo-language is authored once in Roman spelling and rendered into
Devanagari and Bengali with a syllable scheme that the shipped
transliteration tables invert exactly:

  consonant + a      -> bare consonant        (inherent vowel)
  consonant + i/u/e/o -> consonant + vowel sign
  consonant + consonant -> consonant + virama
  word-final consonant -> bare consonant      (table rule `X$`)
  vowel at word start or after a vowel -> independent vowel letter

Words may not end in consonant + "a" (not representable without a long
vowel sign).  Run from the repository root:

    python3 scripts/gen_lexicons.py
"""

import os

OUT = os.path.join("crates", "core", "data")

# english word -> (pseudo word in Roman spelling, pos)
WORDS = [
    ("what", "kon", "other"),
    ("color", "kolor", "noun"),
    ("is", "he", "other"),
    ("the", "di", "other"),
    ("how", "kese", "other"),
    ("many", "meni", "other"),
    ("are", "hen", "other"),
    ("there", "der", "other"),
    ("a", "ek", "other"),
    ("circle", "sirkel", "noun"),
    ("circles", "sirkelen", "noun"),
    ("square", "skver", "noun"),
    ("squares", "skveren", "noun"),
    ("triangle", "tikon", "noun"),
    ("triangles", "tikonen", "noun"),
    ("star", "ster", "noun"),
    ("stars", "steren", "noun"),
    ("red", "lal", "adjective"),
    ("blue", "nil", "adjective"),
    ("green", "grin", "adjective"),
    ("yellow", "pilo", "adjective"),
    ("purple", "purpel", "adjective"),
]

VOWELS = "aeiou"

SCRIPTS = {
    "devanagari": {
        "consonants": {
            "k": "क", "g": "ग", "c": "च", "j": "ज", "t": "त", "d": "द",
            "n": "न", "p": "प", "b": "ब", "m": "म", "y": "य", "r": "र",
            "l": "ल", "v": "व", "s": "स", "h": "ह",
        },
        # extra consonants covered by the table but never produced by the
        # renderer (so romanizing ordinary text does not fail on them)
        "extra_consonants": {
            "ख": "kh", "घ": "gh", "ङ": "n", "छ": "ch", "झ": "jh", "ञ": "n",
            "ट": "t", "ठ": "th", "ड": "d", "ढ": "dh", "ण": "n", "थ": "th",
            "ध": "dh", "फ": "ph", "भ": "bh", "श": "sh", "ष": "sh",
        },
        "signs": {"i": "ि", "u": "ु", "e": "े", "o": "ो"},
        "extra_signs": {"ा": "aa", "ी": "ii", "ू": "uu", "ै": "ai", "ौ": "au", "ृ": "ri"},
        "independent": {"a": "अ", "i": "इ", "u": "उ", "e": "ए", "o": "ओ"},
        "extra_independent": {"आ": "aa", "ई": "ii", "ऊ": "uu", "ऐ": "ai", "औ": "au", "ऋ": "ri"},
        "virama": "्",
        "misc": {"ं": "n", "ँ": "n", "ः": "h", "।": ".", "॥": "."},
        "digits": "०१२३४५६७८९",
    },
    "bengali": {
        "consonants": {
            "k": "ক", "g": "গ", "c": "চ", "j": "জ", "t": "ত", "d": "দ",
            "n": "ন", "p": "প", "b": "ব", "m": "ম", "y": "য", "r": "র",
            "l": "ল", "v": "ৱ", "s": "স", "h": "হ",
        },
        "extra_consonants": {
            "খ": "kh", "ঘ": "gh", "ঙ": "n", "ছ": "ch", "ঝ": "jh", "ঞ": "n",
            "ট": "t", "ঠ": "th", "ড": "d", "ঢ": "dh", "ণ": "n", "থ": "th",
            "ধ": "dh", "ফ": "ph", "ভ": "bh", "শ": "sh", "ষ": "sh",
        },
        "signs": {"i": "ি", "u": "ু", "e": "ে", "o": "ো"},
        "extra_signs": {"া": "aa", "ী": "ii", "ূ": "uu", "ৈ": "oi", "ৌ": "ou", "ৃ": "ri"},
        "independent": {"a": "অ", "i": "ই", "u": "উ", "e": "এ", "o": "ও"},
        "extra_independent": {"আ": "aa", "ঈ": "ii", "ঊ": "uu", "ঐ": "oi", "ঔ": "ou", "ঋ": "ri"},
        "virama": "্",
        "misc": {"ং": "n", "ঁ": "n", "ঃ": "h"},
        "digits": "০১২৩৪৫৬৭৮৯",
    },
}


def render(word, s):
    cons, signs, indep, virama = s["consonants"], s["signs"], s["independent"], s["virama"]
    out = []
    i = 0
    prev_vowel = True  # word start behaves like "after a vowel"
    while i < len(word):
        ch = word[i]
        if ch in VOWELS:
            if not prev_vowel:
                raise AssertionError(f"unreachable in {word}")
            out.append(indep[ch])
            prev_vowel = True
            i += 1
            continue
        base = cons[ch]
        nxt = word[i + 1] if i + 1 < len(word) else None
        if nxt is None:
            out.append(base)
            i += 1
        elif nxt in VOWELS:
            if nxt == "a":
                if i + 2 >= len(word):
                    raise ValueError(f"{word}: word-final consonant+a is not representable")
                out.append(base)
            else:
                out.append(base + signs[nxt])
            i += 2
        else:
            out.append(base + virama)
            i += 1
            prev_vowel = False
            continue
        prev_vowel = True
    return "".join(out)


def table_rows(s):
    rows = []
    allc = {v: k for k, v in s["consonants"].items()}
    allc.update(s["extra_consonants"])
    vowel_signs = {v: k for k, v in s["signs"].items()}
    vowel_signs.update(s["extra_signs"])
    for glyph, roman in allc.items():
        rows.append((glyph, roman + "a"))
        rows.append((glyph + "$", roman))
        rows.append((glyph + s["virama"], roman))
        for sign, vr in vowel_signs.items():
            rows.append((glyph + sign, roman + vr))
    indep = {v: k for k, v in s["independent"].items()}
    indep.update(s["extra_independent"])
    rows.extend(indep.items())
    rows.extend(s["misc"].items())
    rows.extend((d, str(i)) for i, d in enumerate(s["digits"]))
    return rows


def main():
    os.makedirs(os.path.join(OUT, "lexicons"), exist_ok=True)
    os.makedirs(os.path.join(OUT, "translit"), exist_ok=True)

    with open(os.path.join(OUT, "lexicons", "en-hl.tsv"), "w", encoding="utf-8") as f:
        f.write("# English -> pseudo-language, Roman rendering\n")
        f.write("source\ttarget\tpos\n")
        for en, w, pos in WORDS:
            f.write(f"{en}\t{w}\t{pos}\n")

    for name, code in (("devanagari", "hi"), ("bengali", "bn")):
        s = SCRIPTS[name]
        with open(os.path.join(OUT, "lexicons", f"en-{code}.tsv"), "w", encoding="utf-8") as f:
            f.write(f"# English -> pseudo-language, {name} rendering\n")
            f.write("source\ttarget\tpos\n")
            for en, w, pos in WORDS:
                f.write(f"{en}\t{render(w, s)}\t{pos}\n")
        with open(os.path.join(OUT, "translit", f"{name}.tsv"), "w", encoding="utf-8") as f:
            f.write(f"# {name} -> Roman. A trailing $ restricts a rule to word-final position.\n")
            f.write("grapheme\troman\n")
            for g, r in table_rows(s):
                f.write(f"{g}\t{r}\n")


if __name__ == "__main__":
    main()
