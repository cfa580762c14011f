#!/usr/bin/env python3
"""Inspect a trained model: top concept responses and vote heatmaps.

For each of the strongest concept channels, writes the top-10 response list
(JSON) and the vote heatmap PGM toward every part.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from deepvote import io
from deepvote.checkpoint import load_checkpoint
from deepvote.explain import render_heatmap, top_responses_per_concept


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", type=Path, required=True)
    parser.add_argument("--data", type=Path, required=True, help="dataset root")
    parser.add_argument("--out", type=Path, default=Path("gallery"))
    parser.add_argument("--num-concepts", type=int, default=8,
                        help="how many concepts (by total vote mass) to render")
    args = parser.parse_args()

    model, _, _ = load_checkpoint(args.model)
    scenes = [(ann.image_id, grid)
              for grid, ann in io.load_split(args.data / "test_l0")]
    tops = top_responses_per_concept(model, scenes, n=10)

    vote_mass = np.abs(model.voting.weights).sum(axis=(0, 1, 3))
    ranked = np.argsort(-vote_mass)[: args.num_concepts]

    args.out.mkdir(parents=True, exist_ok=True)
    io.write_json(args.out / "top_responses.json",
                  {str(int(k)): tops[int(k)] for k in ranked})
    for k in ranked:
        for s in range(model.num_parts):
            render_heatmap(model, int(k), s,
                           args.out / f"heatmap_vc{int(k):03d}_sp{s}.pgm")
    print(f"wrote top-response lists and {len(ranked) * model.num_parts} heatmaps "
          f"to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
