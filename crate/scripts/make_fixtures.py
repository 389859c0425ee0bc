"""Writes the bundled test fixtures under crates/core/fixtures. Deterministic."""

import json
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"
START = datetime(2020, 3, 2, 9, 0, tzinfo=timezone.utc)

FEATURES = ["save dialog", "login page", "export button", "settings panel", "file upload", "search box"]
ERRORS = ["null pointer exception", "segmentation fault", "timeout error", "stack overflow error"]
TOPICS = ["proxy settings", "release schedule", "plugin docs", "theme colors", "build flags", "meeting notes"]

BR_TURNS = [
    ("r", "the app crashes with a {err} when I click the {feat}"),
    ("d", "which version are you running and can you share the crash log"),
    ("r", "latest version, it fails every time and the {feat} is broken"),
    ("d", "looks like a bug, the {feat} should not crash, please file an issue"),
]
NBR_TURNS = [
    ("r", "how do I change the {topic} for my project"),
    ("d", "you can set the {topic} in the config file, see the wiki page"),
    ("r", "thanks, that works great"),
    ("d", "glad to help, have a nice day"),
]


def ts(minutes):
    return (START + timedelta(minutes=minutes)).strftime("%Y-%m-%dT%H:%M:%SZ")


def dialog_turns(kind, rng):
    turns = BR_TURNS if kind == "BR" else NBR_TURNS
    n = rng.randint(3, 4)
    slots = {"err": rng.choice(ERRORS), "feat": rng.choice(FEATURES), "topic": rng.choice(TOPICS)}
    return [(who, text.format(**slots)) for who, text in turns[:n]]


def write_jsonl(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def chat(prefix, kinds, rng, inline_links):
    """Sequential dialogs, each a reply chain. Returns (utterances, links, labels)."""
    utts, links, labels = [], [], []
    clock = 0
    for k, kind in enumerate(kinds):
        reporter, helper = f"user{k}", f"dev{k % 3}"
        prev = None
        first = None
        for j, (who, text) in enumerate(dialog_turns(kind, rng)):
            uid = f"{prefix}{k:02d}-{j}"
            first = first or uid
            u = {"id": uid, "timestamp": ts(clock), "author": reporter if who == "r" else helper, "text": text}
            if prev is not None:
                if inline_links:
                    u["reply_to_ids"] = [prev]
                links.append({"replier_id": uid, "replied_id": prev})
            utts.append(u)
            prev = uid
            clock += 1
        labels.append({"dialog_id": f"d-{first}", "label": kind})
        clock += 30
    return utts, links, labels


SENTENCES = {
    "OB": [
        "the app crashes when I open the {feat}",
        "clicking the {feat} throws a {err}",
        "the {feat} freezes and nothing happens",
        "I get a {err} after the update",
        "the {feat} shows a blank screen",
    ],
    "EB": [
        "the {feat} should open without errors",
        "I expected the {feat} to save my changes",
        "it should display the results normally",
        "the {feat} is supposed to keep working",
        "expected behavior is a working {feat}",
    ],
    "SR": [
        "open the {feat} and click submit",
        "first install the plugin then restart",
        "go to the {feat} and press enter twice",
        "run the build command then open the {feat}",
        "step one launch the app step two click the {feat}",
    ],
    "OTHER": [
        "I am using version two on linux",
        "I posted this on the forum yesterday",
        "my team uses the {topic} a lot",
        "this is my first time using the tool",
        "we discussed the {topic} last week",
    ],
}


def sentences(n, rng, prefix):
    labels = list(SENTENCES)
    rows = []
    for i in range(n):
        label = labels[i % 4]
        text = rng.choice(SENTENCES[label]).format(
            feat=rng.choice(FEATURES), err=rng.choice(ERRORS), topic=rng.choice(TOPICS)
        )
        rows.append({"id": f"{prefix}{i:03d}", "text": text, "label": label})
    return rows


def main():
    rng = random.Random(20220401)

    kinds = ["BR", "NBR"] * 20
    utts, _, labels = chat("s", kinds, rng, inline_links=True)
    write_jsonl(ROOT / "bri_separable" / "chat.jsonl", utts)
    write_jsonl(ROOT / "bri_separable" / "labels.jsonl", labels)

    write_jsonl(ROOT / "external_sentences.jsonl", sentences(200, rng, "x"))
    write_jsonl(ROOT / "brs_sentences.jsonl", sentences(50, rng, "c"))

    all_labels = []
    for project, kinds in [("alpha", ["BR", "NBR", "NBR", "BR", "NBR"]), ("beta", ["NBR", "BR", "NBR", "NBR", "BR"])]:
        utts, links, labels = chat(f"{project[0]}", kinds, rng, inline_links=False)
        write_jsonl(ROOT / "e2e" / "chat" / f"{project}.jsonl", utts)
        write_jsonl(ROOT / "e2e" / "links" / f"{project}.jsonl", links)
        all_labels.extend(labels)
    write_jsonl(ROOT / "e2e" / "labels.jsonl", all_labels)


if __name__ == "__main__":
    main()
