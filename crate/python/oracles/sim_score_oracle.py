"""Independent reference for the simulated scorer.

Writes crates/core/tests/fixtures/sim_score_vectors.json: 50 (query, prompt,
seed) triples with their expected scores. The Rust tests and the sidecar's
mock mode both check against this file.
"""
import hashlib
import json
import random
import re
from pathlib import Path

QUALITY = {
    "lighting", "composition", "detailed", "serene", "vibrant", "cinematic",
    "dramatic", "atmospheric", "intricate", "textured", "colorful", "golden",
    "soft", "sharp", "panoramic", "ethereal",
}
STOP = {
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into",
    "is", "it", "its", "of", "on", "or", "that", "the", "their", "this", "to",
    "with", "you", "your", "each", "every", "all", "so", "than", "then",
}


def words(text):
    return [w.lower() for w in re.split(r"[^0-9A-Za-z]+", text) if w]


def score(query, prompt, seed):
    q = set(words(query))
    content = {w for w in q if w not in STOP}
    terms = content or q
    p = set(words(prompt))
    coverage = 4.0 if not terms else 4.0 * len(terms & p) / len(terms)
    quality = min(4.0, 0.5 * len(p & QUALITY))
    n = len(prompt.split())
    if n < 30:
        length = 2.0 * n / 30
    elif n <= 60:
        length = 2.0
    else:
        length = max(0.0, 2.0 * (1 - (n - 60) / 60))
    digest = hashlib.sha256(f"{seed}\x1f{query}\x1f{prompt}".encode()).digest()
    noise = 0.5 * (int.from_bytes(digest[:8], "big") >> 11) / 2**53
    return 20.0 + coverage + quality + length + noise


QUERIES = [
    "cactus", "Aquarium with sharks", "Farm with windmill", "flaming phoenix",
    "luxury yacht", "hot air balloon over mountains", "the", "lighthouse at dusk",
]
FILLER = "scene view light sky tree river stone city road cloud field house boat".split()


def main():
    rng = random.Random(20240601)
    cases = []
    for i in range(50):
        query = QUERIES[i % len(QUERIES)]
        n = rng.choice([1, 5, 12, 29, 30, 45, 60, 61, 90, 119, 120, 150])
        pool = FILLER + sorted(QUALITY) + words(query)
        prompt = " ".join(rng.choice(pool) for _ in range(n))
        if i % 5 == 0:
            prompt = prompt.capitalize() + ", " + query.upper() + "!"
        seed = rng.choice([0, 7, 42, 2**40 + 3])
        cases.append({"query": query, "prompt": prompt, "seed": seed, "score": score(query, prompt, seed)})
    out = Path(__file__).resolve().parents[2] / "crates/core/tests/fixtures/sim_score_vectors.json"
    out.write_text(json.dumps(cases, indent=1) + "\n")
    print(f"wrote {len(cases)} cases to {out}")


if __name__ == "__main__":
    main()
