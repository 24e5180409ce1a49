"""Write the 3-product / 30-review hotel corpus used by the end-to-end tests.

Sentences come from small per-theme pools whose words the mock provider
understands, so discovery, extraction and clustering all have something to
do. Some sentences repeat verbatim across reviews (dense clusters), others
are one-offs (noise).

    python3 scripts/make_fixture_corpus.py [out_dir]
"""
from __future__ import annotations

import random
import sys
from pathlib import Path

import yaml

from opinionsum.domain import Review, write_jsonl

POOLS = {
    "staff_pos": [
        "The staff were friendly and helpful.",
        "Reception staff were friendly and helpful.",
        "The concierge was amazing.",
        "Staff at reception were lovely.",
        "The service was excellent.",
        "Friendly staff at the front desk.",
        "The concierge gave perfect advice.",
        "Helpful staff, always smiling.",
        "Service at the bar was fast and friendly.",
        "The reception team was fantastic.",
    ],
    "room_pos": ["The room was clean and spacious."] * 4 + ["The bed was very comfortable.", "Spacious suite with a comfy bed."],
    "room_neg": ["The room was small and cramped.", "The pillows were awful."],
    "breakfast_pos": ["Breakfast was delicious.", "The breakfast was delicious.", "Great coffee at breakfast."],
    "breakfast_neg": ["The restaurant was overpriced and slow."],
    "location_pos": ["Great location near the metro.", "Convenient location downtown.", "Lovely location by the beach."],
    "noise_neg": ["The street was noisy at night.", "The street was noisy at night.", "Loud music from the bar next door."],
    "value_neg": ["A bit expensive for what you get.", "The price was too expensive."],
    "bathroom_neg": ["The shower was broken.", "The towels were dirty."],
    "facilities_pos": ["The pool was lovely.", "Nice gym and a spacious lobby."],
}

PROFILES = {
    "hotel_a": ["staff_pos", "room_pos", "breakfast_pos", "location_pos", "noise_neg"],
    "hotel_b": ["staff_pos", "room_neg", "breakfast_neg", "value_neg", "bathroom_neg"],
    "hotel_c": ["staff_pos", "room_pos", "location_pos", "facilities_pos", "value_neg"],
}


def make_reviews(seed: int = 7, per_product: int = 10) -> list[Review]:
    rng = random.Random(seed)
    out = []
    for product, pools in PROFILES.items():
        staff = list(POOLS["staff_pos"])
        rng.shuffle(staff)
        for i in range(per_product):
            # every review mentions staff once with its own wording, plus three other themes
            picked = [staff[i % len(staff)]]
            for pool in rng.sample(pools[1:], 3):
                picked.append(rng.choice(POOLS[pool]))
            rng.shuffle(picked)
            out.append(Review(f"{product}-r{i:02d}", product, " ".join(picked)))
    return out


CONFIG = {
    "reviews": "reviews.jsonl",
    "out_dir": "out",
    "seed": 13,
    "provider": "mock",
    # 32 hash buckets make unrelated one-word theme names collide too often
    "mock_embedding_dim": 256,
    "workers": 4,
    "refinement": {"min_frequency": 5, "flag_frequency": 5, "similarity_threshold": 0.85, "require_human": False},
    "extraction": {"k_shuffles": 3},
    "evaluation": {"geval_runs": 3, "max_bench_variants": 2},
}


def main(argv: list[str]) -> int:
    out = Path(argv[1]) if len(argv) > 1 else Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "corpus"
    out.mkdir(parents=True, exist_ok=True)
    reviews = make_reviews()
    write_jsonl(out / "reviews.jsonl", (r.to_dict() for r in reviews))
    (out / "config.yaml").write_text(yaml.safe_dump(CONFIG, sort_keys=False), encoding="utf-8")
    print(f"wrote {len(reviews)} reviews to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
