"""Synthetic two-camp persona populations for offline runs and tests."""
from __future__ import annotations

import json
import random
from pathlib import Path

CAMP_TOPICS = {
    "democrat": (
        "healthcare climate voting rights biden unions education equality medicare "
        "science masks stimulus democracy justice reform immigration renewables"
    ).split(),
    "republican": (
        "trump freedom taxes border police guns liberty constitution economy jobs "
        "patriots election integrity military faith borders deregulation"
    ).split(),
}
SHARED_TOPICS = (
    "news debate america vote polls media senate congress campaign president "
    "rally economy covid future country people"
).split()
STYLES = ("outspoken", "critical", "supportive", "sarcastic", "measured")


def make_personas(n: int, seed: int = 0, camps=("democrat", "republican")) -> list[dict]:
    """Persona records ``{user_id, ideology_label, traits}``.

    Interest breadth is drawn from a skewed distribution, so some users are
    narrowly focused and others scattered over many topics.
    """
    rng = random.Random(seed)
    out = []
    for i in range(n):
        camp = camps[i % len(camps)]
        pool = CAMP_TOPICS.get(camp, CAMP_TOPICS["democrat"])
        breadth = min(len(pool), 2 + int(rng.paretovariate(1.2)))
        interests = rng.sample(pool, breadth) + rng.sample(SHARED_TOPICS, rng.randint(1, 3))
        style = rng.choice(STYLES)
        traits = (f"Ideological alignment: {camp}. Frequently discusses: {' '.join(interests)}. "
                  f"Engagement style: {style}.")
        out.append({"user_id": f"u{i:04d}", "ideology_label": camp, "traits": traits})
    return out


def write_personas_file(path: str | Path, n: int, seed: int = 0) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in make_personas(n, seed):
            fh.write(json.dumps(rec) + "\n")
    return path
