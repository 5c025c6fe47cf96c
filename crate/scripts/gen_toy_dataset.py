#!/usr/bin/env python3
"""Regenerates the bundled toy conversational-search dataset.

Output is deterministic for a given seed and written in the compact JSON
layout the Rust ingester re-serializes byte-identically.
"""
import json
import random
import sys
from pathlib import Path

SEED = 20240501
N_DOCS = 40
PASSAGES_PER_DOC = 6
N_CONVS = 24

FILLER = ["the", "of", "and", "was", "in", "a", "to", "with", "for", "by", "is", "its"]
CATEGORIES = ["band", "castle", "river", "festival", "novel", "bridge", "league", "opera",
              "island", "treaty"]
ONSETS = ["b", "br", "d", "dr", "f", "g", "gr", "k", "kl", "l", "m", "n", "p", "pr", "r",
          "s", "st", "t", "tr", "v", "z"]
VOWELS = ["a", "e", "i", "o", "u", "ae", "ou"]
CODAS = ["", "n", "r", "l", "s", "th", "m", "k"]


def dumps(obj):
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def main(out_dir):
    rng = random.Random(SEED)
    used = set(FILLER)

    def word(syllables):
        while True:
            w = "".join(rng.choice(ONSETS) + rng.choice(VOWELS) + rng.choice(CODAS)
                        for _ in range(syllables))
            if w not in used and len(w) > 3:
                used.add(w)
                return w

    shared = [word(2) for _ in range(60)]
    docs = []
    for d in range(N_DOCS):
        entity = [word(2).capitalize(), word(2).capitalize()]
        category = CATEGORIES[d % len(CATEGORIES)]
        keywords = [word(2) for _ in range(12)]
        passages = []
        for p in range(PASSAGES_PER_DOC):
            kws = rng.sample(keywords, 4)
            uniq = [word(3) for _ in range(4)]
            sh = rng.sample(shared, 3)
            first = (f"{entity[0]} {entity[1]} {rng.choice(FILLER)} {kws[0]} {uniq[0]} "
                     f"{category} {kws[1]} {uniq[1]} {sh[0]}.")
            rest = []
            for _ in range(3):
                toks = [rng.choice(FILLER), rng.choice(kws), rng.choice(uniq),
                        rng.choice(FILLER), rng.choice(sh), rng.choice(FILLER),
                        rng.choice(kws + uniq)]
                rest.append(" ".join(toks) + ".")
            rest.append(f"{uniq[2]} {uniq[3]} {kws[2]} {kws[3]} {category}.")
            passages.append({
                "passage_id": f"d{d:02d}_p{p}",
                "text": " ".join([first] + rest),
                "source_doc": f"wiki/doc{d:02d}",
                "kws": kws,
                "uniq": uniq,
                "first": first,
            })
        docs.append({"entity": entity, "category": category, "passages": passages})

    with open(Path(out_dir) / "passages.jsonl", "w", encoding="utf-8") as f:
        for doc in docs:
            for p in doc["passages"]:
                f.write(dumps({"passage_id": p["passage_id"], "text": p["text"],
                               "source_doc": p["source_doc"]}) + "\n")

    pronouns = ["it", "they", "its", "their", "this"]
    convs = []
    for c in range(N_CONVS):
        n_turns = rng.randint(5, 7)
        doc_idx = rng.randrange(N_DOCS)
        used_passages = set()
        turns = []
        for t in range(1, n_turns + 1):
            if t > 2 and rng.random() < 0.25:
                doc_idx = rng.randrange(N_DOCS)
            doc = docs[doc_idx]
            free = [i for i in range(PASSAGES_PER_DOC) if (doc_idx, i) not in used_passages]
            if not free:
                doc_idx = (doc_idx + 1) % N_DOCS
                doc = docs[doc_idx]
                free = list(range(PASSAGES_PER_DOC))
            pi = rng.choice(free)
            used_passages.add((doc_idx, pi))
            p = doc["passages"][pi]
            name = " ".join(doc["entity"])
            kw = rng.choice(p["kws"][:2])
            extra = f" {p['uniq'][1]}" if rng.random() < 0.3 else ""
            shifted = bool(turns) and turns[-1]["_doc"] != doc_idx
            if t == 1 or shifted:
                question = f"what is the {kw} of {name}{extra}?"
                rewrite = question
            else:
                pron = rng.choice(pronouns)
                question = f"what about {pron} {kw}{extra}?"
                rewrite = f"what about {name} {kw}{extra}?"
            turns.append({
                "turn_id": t,
                "question": question,
                "answer": p["first"],
                "gold_passage_ids": [p["passage_id"]],
                "human_rewrite": rewrite if c % 2 == 0 else None,
                "_doc": doc_idx,
            })
        if c % 3 == 2:
            turns.append({
                "turn_id": n_turns + 1,
                "question": "anything else?",
                "answer": "",
                "gold_passage_ids": [],
                "human_rewrite": None,
                "_doc": -1,
            })
        for turn in turns:
            del turn["_doc"]
        convs.append({"conv_id": f"toy{c:03d}", "turns": turns})

    with open(Path(out_dir) / "conversations.jsonl", "w", encoding="utf-8") as f:
        for conv in convs:
            f.write(dumps(conv) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/data/toy")
