#!/usr/bin/env python3
"""Regenerate the bundled fixture data under data/.

data/tiny: four small rule-tagged corpora (three NER domains, one POS)
with a JSONL manifest, used by the CLI walkthrough and the tests.
data/meta: the engineered meta-suite distances and pair observations
that exercise the predictor stack end to end.

Everything is deterministic; rerunning must reproduce the same bytes.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from srcsel.measures import write_distances
from srcsel.synthetic import meta_suite, tiny_suite, write_corpus_files
from srcsel.transfer import write_observations


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    args = parser.parse_args()

    tiny_dir = args.root / "tiny"
    manifest = write_corpus_files(tiny_suite(), tiny_dir)
    print(f"wrote {manifest}")

    meta_dir = args.root / "meta"
    meta_dir.mkdir(parents=True, exist_ok=True)
    for kind in ("mixed", "all_negative"):
        suite = meta_suite(kind)
        write_distances(suite.distances, meta_dir / f"{kind}.distances.csv")
        write_observations(suite.observations, meta_dir / f"{kind}.observations.jsonl")
        print(f"wrote meta suite {kind}: {len(suite.distances)} distances, "
              f"{len(suite.observations)} observations")


if __name__ == "__main__":
    main()
