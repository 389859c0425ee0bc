#!/usr/bin/env python3
"""Regenerates the pinned lexical resources under crates/core/resources.

Inputs:
  * wordfreq (pip install wordfreq) for the English word list.
  * A WordNet 3.0 database directory (data.* / *.exc files), passed as argv[1].
  * scikit-learn for the English stopword list.

The generated files are committed; this script only exists so they can be
rebuilt and audited.
"""
import os
import sys

from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS
from wordfreq import top_n_list

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "resources")
WORDNET = sys.argv[1]

words = []
seen = set()
for w in top_n_list("en", 20000):
    if w.isascii() and w.isalpha() and w not in seen:
        seen.add(w)
        words.append(w)
vocab = set(words)

with open(os.path.join(OUT, "english_words.txt"), "w") as f:
    f.write("\n".join(words) + "\n")

with open(os.path.join(OUT, "stopwords_en.txt"), "w") as f:
    f.write("\n".join(sorted(ENGLISH_STOP_WORDS)) + "\n")

# Synonyms: single-token lemmas sharing a synset, both sides in the word list.
synonyms = {}
for pos in ("noun", "verb", "adj", "adv"):
    with open(os.path.join(WORDNET, "data." + pos), encoding="latin-1") as f:
        for line in f:
            if line.startswith("  "):
                continue
            parts = line.split()
            count = int(parts[3], 16)
            lemmas = []
            for i in range(count):
                lemma = parts[4 + 2 * i].lower()
                if "(" in lemma:
                    lemma = lemma[: lemma.index("(")]
                if lemma.isalpha() and lemma in vocab:
                    lemmas.append(lemma)
            for a in lemmas:
                for b in lemmas:
                    if a != b:
                        synonyms.setdefault(a, [])
                        if b not in synonyms[a]:
                            synonyms[a].append(b)

rank = {w: i for i, w in enumerate(words)}
with open(os.path.join(OUT, "thesaurus.tsv"), "w") as f:
    for w in sorted(synonyms, key=lambda x: rank[x]):
        if w in ENGLISH_STOP_WORDS:
            continue
        syns = [s for s in sorted(synonyms[w], key=lambda x: rank[x]) if s not in ENGLISH_STOP_WORDS][:6]
        if syns:
            f.write(w + "\t" + ",".join(syns) + "\n")

# Irregular inflections (inflected -> base), restricted to the word list.
irregular = {}
for pos in ("noun", "verb", "adj"):
    with open(os.path.join(WORDNET, pos + ".exc"), encoding="latin-1") as f:
        for line in f:
            parts = line.split()
            if len(parts) < 2:
                continue
            form, base = parts[0], parts[1]
            if form.isalpha() and base.isalpha() and form in vocab and base in vocab and form not in irregular:
                irregular[form] = base
# forms of "do" that the noun rules would otherwise turn into "doe"
for form in ("does", "doing", "did"):
    irregular[form] = "do"
with open(os.path.join(OUT, "lemma_exceptions.tsv"), "w") as f:
    for form in sorted(irregular):
        f.write(form + "\t" + irregular[form] + "\n")
