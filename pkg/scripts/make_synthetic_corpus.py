#!/usr/bin/env python3
"""Write a seeded synthetic corpus (tiles, manifest.csv, config.yaml) for trying the CLI."""

import argparse

from chmeval.synthetic import MODEL_PROFILES, make_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("root")
    p.add_argument("--tiles", type=int, default=12)
    p.add_argument("--tile-px", type=int, default=180)
    p.add_argument("--models", default=",".join(MODEL_PROFILES))
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    cfg = make_corpus(args.root, args.tiles, args.tile_px, args.models.split(","), args.seed)
    print(f"config written to {cfg}")
    print(f"next: chmeval evaluate {cfg} && chmeval report {cfg.parent / 'out' / 'metrics.csv'}")


if __name__ == "__main__":
    main()
