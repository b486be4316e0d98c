"""Regenerates the bundled synthetic corpora (released CC0).

Each corpus is one document per line plus a JSON sidecar of keyword spans.
Vocabularies stay under 62 word types so a 64-token model covers them.
"""
import json
import random
from pathlib import Path

HERE = Path(__file__).parent

AIRLINE = {
    "subject": ["the crew", "the flight", "the seat", "the food", "the staff", "the lounge"],
    "verb": ["was", "felt", "seemed"],
    "adj": ["great", "poor", "friendly", "slow", "clean", "cramped", "late", "comfortable"],
    "keywords": ["new york", "leg room", "check in", "business class", "hand luggage", "long haul"],
    "frames": [
        "{subject} {verb} {adj} and {subject} {verb} {adj} on my {kw} trip",
        "i flew to {kw} and {subject} {verb} {adj} but {subject} {verb} {adj}",
        "my {kw} experience {verb} {adj} because {subject} {verb} {adj}",
        "{subject} {verb} {adj} at {kw} so i would not fly again",
        "the {kw} {verb} {adj} and {subject} {verb} very {adj} overall",
    ],
}

CLINIC = {
    "subject": ["the patient", "the wound", "the fever", "the pain", "the cough", "the rash"],
    "verb": ["is", "was", "remains"],
    "adj": ["stable", "mild", "severe", "improving", "worse", "unchanged", "dry", "red"],
    "keywords": ["blood pressure", "heart rate", "chest pain", "follow up", "pain relief", "side effects"],
    "frames": [
        "{subject} {verb} {adj} and {kw} {verb} {adj} after the visit",
        "we checked {kw} today and {subject} {verb} {adj}",
        "{subject} {verb} {adj} so we plan {kw} next week",
        "note that {kw} {verb} {adj} while {subject} {verb} {adj}",
        "{subject} {verb} {adj} with no {kw} reported by the family",
    ],
}


def render(template, rng):
    frame = rng.choice(template["frames"])
    words, spans = [], []
    for part in frame.split():
        if part == "{kw}":
            kw = rng.choice(template["keywords"])
            spans.append({"start": len(words), "text": kw})
            words.extend(kw.split())
        elif part.startswith("{"):
            words.extend(rng.choice(template[part[1:-1]]).split())
        else:
            words.append(part)
    return " ".join(words), spans


def build(name, template, n, seed):
    rng = random.Random(seed)
    docs, keywords = [], []
    for _ in range(n):
        text, spans = render(template, rng)
        docs.append(text)
        keywords.append(spans)
    types = {w for d in docs for w in d.split()}
    assert len(types) <= 62, (name, len(types))
    (HERE / f"{name}.txt").write_text("\n".join(docs) + "\n")
    (HERE / f"{name}.keywords.json").write_text(json.dumps({"keywords": keywords}, indent=1) + "\n")
    print(name, len(docs), "documents,", len(types), "word types")


build("airline", AIRLINE, 60, 1)
build("clinic", CLINIC, 60, 2)
