#!/usr/bin/env python3
"""Writes the bundled mini-corpus: 20 documents of 10 paragraphs each
(200 chunks under default chunking) and 20 questions.

Output is a pure function of this script; rerun after editing and commit the
result together with the refreshed golden file.
"""
import json
import pathlib
import random

TOPICS = [
    ("Aldermoor", "river port", "wool"), ("Brightwater", "mountain town", "copper"),
    ("Caldera Bay", "fishing village", "salt"), ("Dunmere", "market city", "grain"),
    ("Eastfold", "border fort", "iron"), ("Fenwick", "marsh settlement", "peat"),
    ("Glenhaven", "valley abbey", "honey"), ("Harrowgate", "trade crossing", "horses"),
    ("Ironvale", "mining camp", "silver"), ("Juniper Hill", "hill village", "cider"),
    ("Kestrel Point", "lighthouse station", "signal oil"), ("Larkspur", "garden estate", "dye"),
    ("Millbrook", "mill town", "flour"), ("Northwatch", "watchtower", "timber"),
    ("Oakridge", "forest lodge", "charcoal"), ("Pinecrest", "ski resort", "tourism"),
    ("Queensford", "river crossing", "tolls"), ("Ravenscar", "cliff harbor", "whale oil"),
    ("Stonebridge", "quarry town", "granite"), ("Thornbury", "farming parish", "barley"),
]
PEOPLE = ["Mara Quill", "Tobias Wren", "Elena Voss", "Hugo Marsh", "Ines Calder", "Otto Brand",
          "Lena Frost", "Victor Hale", "Nadia Stone", "Felix Rowe"]
YEARS = list(range(1702, 1899, 7))
TEMPLATES = [
    "{place} was founded in {year} as a {kind} by {person}.",
    "The economy of {place} depended on {good}, which was shipped along the old road.",
    "In {year} a fire destroyed the eastern quarter of {place}. {person} led the rebuilding.",
    "{person} served as the first magistrate of {place} and kept the town ledger.",
    "The population of {place} reached {pop} residents during the {good} boom.",
    "A stone chapel in {place} was consecrated in {year}. Pilgrims visited every spring.",
    "Merchants from {place} formed a guild for {good} under the charter of {person}.",
    "The {place} archive holds maps drawn by {person} in {year}.",
    "Flooding in {year} forced the {kind} of {place} to move uphill.",
    "Today {place} is known for its annual {good} festival.",
]


def fnv1a64(s: str) -> int:
    h = 0xCBF29CE484222325
    for b in s.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def chunk_id(text: str) -> str:
    return "c" + format(fnv1a64(text), "016x")


def main() -> None:
    rng = random.Random(20240611)
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "mini"
    out.mkdir(parents=True, exist_ok=True)
    docs, facts = [], []
    for d, (place, kind, good) in enumerate(TOPICS):
        paras = []
        for t, tpl in enumerate(TEMPLATES):
            fields = dict(place=place, kind=kind, good=good, person=rng.choice(PEOPLE),
                          year=rng.choice(YEARS), pop=rng.randrange(400, 9000, 50))
            text = tpl.format(**fields)
            paras.append(text)
            facts.append((d, t, fields, text))
        docs.append({"doc_id": f"doc{d:02d}", "text": "\n\n".join(paras)})

    questions = []
    for i, (place, kind, good) in enumerate(TOPICS):
        d = i
        t = rng.randrange(len(TEMPLATES))
        _, _, f, text = facts[d * len(TEMPLATES) + t]
        first = text.split(". ")[0].rstrip(".") + "."
        q = {"id": f"q{i:02d}", "tags": [f"doc{d:02d}"]}
        if t in (0, 7):
            q["text"] = f"When and by whom was {place} associated with {f['person']}?"
        elif t in (1, 6, 9):
            q["text"] = f"What role did {good} play in {place}?"
        elif t == 4:
            q["text"] = f"How many people lived in {place} at its peak?"
        else:
            q["text"] = f"What happened in {place} in {f['year']}?"
        if i % 10 != 9:
            q["ground_truth"] = first
        if i % 2 == 0:
            q["gold_chunk_ids"] = [chunk_id(text)]
        questions.append(q)

    with open(out / "docs.jsonl", "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc, ensure_ascii=False) + "\n")
    with open(out / "questions.jsonl", "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps(q, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
