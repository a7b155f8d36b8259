"""Regenerate the shipped toy style distribution.

Runs stage-1 data generation with toy backends on 500 prompts sampled from
the default corpus, then fits the Gaussian used by the distribution loss.
Outputs ``toy_style_embeddings.txt`` and ``toy_style.fcsdist`` in the
package data directory. Takes roughly 15-20 minutes on one CPU core.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from textstyler import backends, distribution, images, pipeline, prompts
from textstyler.seeding import rng_for

DATA = Path(__file__).resolve().parents[1] / "src" / "textstyler" / "data"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-prompts", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default=str(DATA))
    args = parser.parse_args()

    corpus = prompts.combine(prompts.default_bank())
    idx = rng_for("toy-distribution", args.seed).choice(len(corpus), args.n_prompts, replace=False)
    chosen = [corpus.prompts[i] for i in sorted(idx)]
    pool = images.demo_content_pool(seed=args.seed)
    b = pipeline.Backends(*backends.make_backends("toy"))

    def progress(done, total, rec):
        if done % 25 == 0:
            print(f"{done}/{total} {rec.prompt!r} loss={rec.loss:.1f}", file=sys.stderr, flush=True)

    pairs = pipeline.generate_pairs(chosen, pool, pipeline.stage_config("stage1", seed=args.seed), b,
                                    progress=progress)
    styles = np.stack([p.style_embedding for p in pairs]).astype(np.float64)
    out = Path(args.out_dir)
    np.savetxt(out / "toy_style_embeddings.txt", styles, fmt="%.9g")
    distribution.save(distribution.fit(styles), out / "toy_style.fcsdist")


if __name__ == "__main__":
    main()
