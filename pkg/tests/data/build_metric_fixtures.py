"""Regenerate the frozen metric fixtures.

Run from the repository root:  python3 tests/data/build_metric_fixtures.py

The expected EM/F1 values come from the independent reference scorer in
tests/reference_scorer.py, never from the package under test.
"""

import json
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from reference_scorer import ref_exact, ref_f1, ref_max_over_golds

HERE = Path(__file__).parent

CONFORMANCE_CASES = [
    # exact and near-exact matches
    ("Argo", ["Argo"]),
    ("argo.", ["Argo"]),
    ("The Dardanelles", ["Dardanelles"]),
    ("an apple", ["Apple"]),
    ("Neil Cuthbert and Mick Garris", ["Mick Garris"]),
    ("Neil Cuthbert and Mick Garris", ["Neil Cuthbert and Mick Garris"]),
    ("George Clooney", ["george   clooney"]),
    ("Ben Affleck", ["Argo"]),
    ("Paris", ["Paris", "City of Light"]),
    ("the city of light", ["Paris", "City of Light"]),
    ("JFK", ["John F. Kennedy", "JFK"]),
    ("John F Kennedy", ["John F. Kennedy", "JFK"]),
    ("1993", ["1993"]),
    ("July 16, 1993", ["July 16, 1993"]),
    ("July 1993", ["July 16, 1993"]),
    ("$39 million", ["39 million"]),
    ("thirty-nine million", ["39 million"]),
    ("Salem, Massachusetts", ["Salem"]),
    ("Salem, Massachusetts", ["Salem, Massachusetts"]),
    ("witches", ["a trio of witches"]),
    ("Bette Midler, Kathy Najimy, and Sarah Jessica Parker", ["Bette Midler"]),
    ("Kenny Ortega", ["Kenny Ortega"]),
    ("kenny  ortega!!", ["Kenny Ortega"]),
    ("Walt Disney Pictures", ["Disney"]),
    ("Disney", ["Walt Disney Pictures"]),
    ("the Ottoman Empire", ["Ottoman Empire"]),
    ("British and French", ["the British and the French"]),
    ("World War I", ["World War One", "World War I", "WWI"]),
    ("WW1", ["World War One", "World War I", "WWI"]),
    ("April 1915 to January 1916", ["1915-1916"]),
    ("over half a million men", ["half a million"]),
    ("Syriana (2005)", ["Syriana"]),
    ("Academy Award", ["an Academy Award"]),
    ("two Academy Awards", ["Academy Award"]),
    ("AFI Lifetime Achievement Award", ["the AFI Lifetime Achievement Award"]),
    ("Golden Globe", ["Golden Globe Awards"]),
    ("", ["Argo"]),
    ("   ", ["Argo"]),
    ("...", ["Argo"]),
    ("'Argo'", ["Argo"]),
    ('"Hocus Pocus"', ["Hocus Pocus"]),
    ("Hocus-Pocus", ["Hocus Pocus"]),
    ("hocus pocus 2", ["Hocus Pocus"]),
    ("the", ["the"]),
    ("a b c", ["a b c d"]),
    ("x y z", ["p q r"]),
    ("An Apple a Day", ["apple day"]),
    ("Sea of Marmara", ["the Sea of Marmara", "Marmara Sea"]),
    ("Aegean Sea", ["the Aegean"]),
    ("Russia", ["Russia", "the Russian Empire"]),
]


def build_conformance():
    assert len(CONFORMANCE_CASES) == 50, len(CONFORMANCE_CASES)
    rows = []
    for prediction, golds in CONFORMANCE_CASES:
        rows.append(
            {
                "prediction": prediction,
                "golds": golds,
                "em": ref_max_over_golds(ref_exact, prediction, golds),
                "f1": ref_max_over_golds(ref_f1, prediction, golds),
            }
        )
    (HERE / "metric_conformance.json").write_text(
        json.dumps(rows, ensure_ascii=False, indent=1), encoding="utf-8"
    )
    print(f"metric_conformance.json: {len(rows)} cases")


def build_subset_fixture():
    # ids follow the synthetic 3,610-record file built inside the test
    picked = sorted(random.Random(0).sample(range(3610), 1000))
    ids = [f"q{i:04d}" for i in picked]
    (HERE / "subset_ids_seed0.json").write_text(json.dumps(ids), encoding="utf-8")
    print(f"subset_ids_seed0.json: {len(ids)} ids")


if __name__ == "__main__":
    build_conformance()
    build_subset_fixture()
