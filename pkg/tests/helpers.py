"""Shared test data and small utilities."""

import json
from pathlib import Path

# Model answer to the scored prompt used as the running example.
EXAMPLE_ANSWER = """{
  "anger": false,
  "cognitive_dysfunction": true,
  "emptiness": false,
  "hopelessness": true,
  "loneliness": true,
  "sadness": true,
  "suicide_intent": false,
  "worthlessness": true,
  "severity_score": 7
}"""

EXAMPLE_PRESENT = {"cognitive_dysfunction", "hopelessness", "loneliness", "sadness", "worthlessness"}


def write_jsonl(path: Path, rows) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


def corpus_rows(n, subreddits=("r/depression", "r/anxiety", "r/mentalhealth"), seed=0):
    """Synthetic Reddit-style records spread over 2024."""
    import random

    rng = random.Random(seed)
    words = "tired alone nothing matters sleep again work friends empty why never better".split()
    rows = []
    for i in range(n):
        month = 1 + i % 12
        rows.append(
            {
                "id": f"t3_{i:04d}",
                "title": f"post {i}",
                "selftext": " ".join(rng.choice(words) for _ in range(12)) + f" #{i}",
                "subreddit": subreddits[i % len(subreddits)],
                "created_utc": 1704067200 + (month - 1) * 30 * 86400 + i,
            }
        )
    return rows
