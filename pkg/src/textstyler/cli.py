"""Command-line entry point: ``textstyler <command> [options]``.

Exit status is 0 on success, 2 on a usage error and 1 on a runtime error.
"""
import argparse
import os
import sys
from datetime import datetime, timezone
from importlib import resources

import numpy as np
import torch

from . import (backends, bench, config, distribution, images, network, pipeline, projection,
               prompts)
from .errors import TextStylerError
from .losses import LossWeights, PatchConfig

STAGE_OF = {"gen-pairs": "stage1", "pretrain": "stage2", "train": "stage3", "finetune": "stage4",
            "bench": "stage1"}
LOSS_KEYS = ("lambda_dir", "lambda_patch", "lambda_dis")
PATCH_KEYS = ("n_patches", "patch_size", "threshold", "distortion")


def _common(p):
    g = p.add_argument_group("common options")
    g.add_argument("--backend", choices=("toy", "pretrained"), default=None,
                   help="embedder and stylizer implementation (default: toy)")
    g.add_argument("--embedder-model", help="CLIP model directory for --backend pretrained")
    g.add_argument("--stylizer-model", help="TorchScript stylizer file for --backend pretrained")
    g.add_argument("--seed", type=int, help="global seed (default 0)")
    g.add_argument("--backend-seed", type=int,
                   help="seed of the toy backends; the shipped distribution assumes 0 (default 0)")
    g.add_argument("--config", help="key = value file; command-line flags take precedence")
    g.add_argument("--out", required=True, help="output path")


def _training(p, with_loss=True):
    g = p.add_argument_group("optimization")
    g.add_argument("--steps", type=int, help="optimizer steps (stages 1, 4) or epochs (stages 2, 3)")
    g.add_argument("--lr", type=float)
    g.add_argument("--batch-size", type=int)
    if with_loss:
        _loss(p)


def _loss(p):
    g = p.add_argument_group("loss")
    g.add_argument("--lambda-dir", type=float)
    g.add_argument("--lambda-patch", type=float)
    g.add_argument("--lambda-dis", type=float)
    g.add_argument("--n-patches", type=int)
    g.add_argument("--patch-size", type=int)
    g.add_argument("--threshold", type=float)
    g.add_argument("--distortion", type=float)
    g.add_argument("--source-text")


def _content(p, required=False, single=False):
    what = "content PNG" if single else "PNG file or directory of PNGs"
    p.add_argument("--content", required=required,
                   help=what + ("" if required else "; default: seeded synthetic images"))


def build_parser():
    parser = argparse.ArgumentParser(prog="textstyler", description="Text-driven style transfer toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-prompts", help="build a prompt corpus from keyword lists")
    p.add_argument("--bank", help="keyword bank file (default: shipped bank)")
    p.add_argument("--rule", action="append", metavar="CATS[=COUNT]",
                   help="e.g. colors,textures=100; repeatable (default: shipped rules)")
    _common(p)

    p = sub.add_parser("gen-pairs", help="stage 1: per-prompt optimization into (text, style) pairs")
    p.add_argument("--prompts", required=True, help="corpus file, one prompt per line")
    p.add_argument("--limit", type=int, help="use only the first N prompts")
    p.add_argument("--mode", choices=("network", "embedding"))
    p.add_argument("--distribution", help="optional style distribution for the distribution term")
    _content(p)
    _training(p)
    _common(p)

    p = sub.add_parser("fit-distribution", help="fit the Gaussian over style embeddings")
    p.add_argument("--embeddings", required=True, help="pairs file (.jsonl) or whitespace matrix")
    p.add_argument("--ridge", type=float)
    _common(p)

    p = sub.add_parser("pretrain", help="stage 2: supervised regression on pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--trace", help="CSV loss trace (epoch, term, value)")
    _training(p, with_loss=False)
    _common(p)

    p = sub.add_parser("train", help="stage 3: integrated training through the backends")
    p.add_argument("--prompts", required=True)
    p.add_argument("--ckpt", help="starting checkpoint (default: fresh initialization)")
    p.add_argument("--distribution", help="style distribution (default: shipped toy fixture)")
    p.add_argument("--trace", help="CSV loss trace (epoch, term, value)")
    _content(p)
    _training(p)
    _common(p)

    p = sub.add_parser("finetune", help="stage 4: last-layer fine-tuning for one query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--distribution")
    _content(p, required=True, single=True)
    _training(p)
    _common(p)

    p = sub.add_parser("stylize", help="stylize one image in a single forward pass")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", required=True)
    _content(p, required=True, single=True)
    _common(p)

    p = sub.add_parser("project", help="2-D projection of predicted or stored style embeddings")
    p.add_argument("--pairs", required=True)
    p.add_argument("--method", choices=("pca", "tsne"), default="pca")
    p.add_argument("--groups", help="keyword = group file (default: shipped mapping)")
    p.add_argument("--ckpt", help="project this network's predictions instead of the stored labels")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    _common(p)

    p = sub.add_parser("bench", help="timing report: stylize vs fine-tune vs stage 1")
    p.add_argument("--ckpt", help="network to time (default: fresh initialization)")
    p.add_argument("--prompt", default="blue lines")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--stage1-steps", type=int, default=200)
    p.add_argument("--finetune-steps", type=int, default=50)
    p.add_argument("--distribution")
    _content(p)
    _loss(p)
    _common(p)
    return parser


def _settings(args):
    """Defaults < config file < flags, restricted to known config keys."""
    defaults = {"backend": "toy", "seed": 0, "backend_seed": 0}
    file_values = config.load_config(args.config) if args.config else {}
    flags = {k: getattr(args, k) for k in config.KEYS if hasattr(args, k)}
    return config.merge(defaults, file_values, flags)


def _stage_cfg(stage, s):
    base = pipeline.stage_config(stage)
    weights = LossWeights(**{k: s.get(k, getattr(base.weights, k)) for k in LOSS_KEYS})
    patch = PatchConfig(**{k: s.get(k, getattr(base.patch, k)) for k in PATCH_KEYS})
    kwargs = {k: s[k] for k in ("steps", "lr", "batch_size", "source_text", "mode") if k in s}
    return pipeline.stage_config(stage, weights=weights, patch=patch, seed=s["seed"], **kwargs)


def _backends(s):
    emb, sty = backends.make_backends(s["backend"], seed=s["backend_seed"], embedder_model=s.get("embedder_model"),
                                      stylizer_model=s.get("stylizer_model"))
    return pipeline.Backends(emb, sty)


def _content_pool(path, seed):
    if path is None:
        return images.demo_content_pool(seed=seed)
    if os.path.isdir(path):
        pool = images.load_image_dir(path)
    else:
        pool = [images.load_image(path)]
    for img in pool:
        images.check_image(img)
    return pool


def _distribution(path):
    if path is None:
        raw = resources.files("textstyler.data").joinpath("toy_style.fcsdist").read_bytes()
        return distribution.from_bytes(raw)
    return distribution.load(path)


def _read_embeddings(path):
    if path.endswith(".jsonl"):
        return np.stack([p.style_embedding for p in pipeline.load_pairs(path)]).astype(np.float64)
    return np.atleast_2d(np.loadtxt(path, dtype=np.float64))


def _write_trace(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,term,value\n")
        for epoch, term, value in rows:
            fh.write(f"{epoch},{term},{value!r}\n")


def _run(args, s, argv):
    started = datetime.now(timezone.utc)
    cmd = args.command
    outputs = [args.out]
    fingerprints = {}

    if cmd == "gen-prompts":
        bank = prompts.load_bank(args.bank) if args.bank else prompts.default_bank()
        if args.rule:
            rules, counts = [], []
            for spec in args.rule:
                cats, _, count = spec.partition("=")
                rules.append(tuple(c.strip() for c in cats.split(",")))
                counts.append(int(count) if count else None)
        else:
            rules, counts = prompts.DEFAULT_RULES, prompts.DEFAULT_COUNTS
        corpus = prompts.combine(bank, rules, counts, seed=s["seed"])
        prompts.save_corpus(corpus, args.out)
        print(f"{len(corpus)} prompts -> {args.out}")

    elif cmd == "fit-distribution":
        dist = distribution.fit(_read_embeddings(args.embeddings),
                                ridge=s.get("ridge", distribution.DEFAULT_RIDGE))
        distribution.save(dist, args.out)
        print(f"fitted {dist.sample_count} embeddings -> {args.out}")

    elif cmd == "project":
        pairs = pipeline.load_pairs(args.pairs)
        labels = [projection.group_of(p.prompt, projection.load_groups(args.groups)) for p in pairs]
        if args.ckpt:
            net = network.load(args.ckpt)
            with torch.no_grad():
                x = net(torch.from_numpy(np.stack([p.text_embedding for p in pairs]))).numpy()
        else:
            x = np.stack([p.style_embedding for p in pairs])
        extra = {"perplexity": args.perplexity, "n_iter": args.iterations} if args.method == "tsne" else {}
        coords = projection.project(x, args.method, seed=s["seed"], **extra)
        projection.write_csv(args.out, [p.prompt for p in pairs], labels, coords)
        image = os.path.splitext(args.out)[0] + ".png"
        projection.write_scatter(image, labels, coords, title=args.method)
        outputs.append(image)

    else:
        b = _backends(s)
        fingerprints = {"embedder": b.embedder.fingerprint, "stylizer": b.stylizer.fingerprint}
        cfg = _stage_cfg(STAGE_OF[cmd], s) if cmd in STAGE_OF else None

        if cmd == "gen-pairs":
            corpus = prompts.load_corpus(args.prompts)[:args.limit]
            dist = distribution.load(args.distribution) if args.distribution else None
            pool = _content_pool(args.content, s["seed"])
            pairs = pipeline.generate_pairs(
                corpus, pool, cfg, b, dist,
                progress=lambda i, n, rec: print(f"[{i}/{n}] {rec.prompt!r} loss {rec.loss:.4g}",
                                                 file=sys.stderr))
            pipeline.save_pairs(pairs, args.out)

        elif cmd == "pretrain":
            trace = []
            net = pipeline.stage2_pretrain(pipeline.load_pairs(args.pairs), cfg, trace=trace)
            net.fingerprint = b.fingerprint
            network.save(net, args.out)
            if args.trace:
                _write_trace(trace, args.trace)
                outputs.append(args.trace)

        elif cmd == "train":
            net = network.load(args.ckpt) if args.ckpt else network.init(s["seed"])
            trace = []
            net = pipeline.stage3_integrated_train(net, prompts.load_corpus(args.prompts),
                                                   _content_pool(args.content, s["seed"]),
                                                   _distribution(args.distribution), cfg, b, trace=trace)
            net.fingerprint = b.fingerprint
            network.save(net, args.out)
            if args.trace:
                _write_trace(trace, args.trace)
                outputs.append(args.trace)

        elif cmd == "finetune":
            content = _content_pool(args.content, s["seed"])[0]
            net = pipeline.stage4_finetune(network.load(args.ckpt), args.prompt, content,
                                           _distribution(args.distribution), cfg, b)
            net.fingerprint = b.fingerprint
            network.save(net, args.out)

        elif cmd == "stylize":
            content = _content_pool(args.content, s["seed"])[0]
            out = pipeline.stylize(network.load(args.ckpt), args.prompt, content, b)
            images.save_image(out, args.out)

        elif cmd == "bench":
            net = network.load(args.ckpt) if args.ckpt else network.init(s["seed"])
            rows = bench.run(net, args.prompt, _content_pool(args.content, s["seed"]),
                             _distribution(args.distribution), b, trials=args.trials,
                             stage1_cfg=pipeline.stage_config("stage1", seed=s["seed"], steps=args.stage1_steps,
                                                              weights=cfg.weights, patch=cfg.patch),
                             stage4_cfg=pipeline.stage_config("stage4", seed=s["seed"], steps=args.finetune_steps,
                                                              weights=cfg.weights, patch=cfg.patch))
            bench.write_report(rows, args.out)
            for task, steps, _, median in rows:
                print(f"{task:10s} steps={steps:<4d} median={median * 1e3:.3f} ms")

    config.write_manifest(args.out, cmd, argv, s, fingerprints, outputs, started)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        s = _settings(args)
        _run(args, s, argv)
    except (TextStylerError, OSError) as exc:
        print(f"textstyler {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
