"""Wall-clock comparison of single-pass stylization against per-query optimization."""
import csv
import statistics
import time

from . import network, pipeline


def median_time(fn, trials, warmup=1):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(trials):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def run(net, prompt, content_pool, dist, backends, trials=20, stage1_cfg=None, stage4_cfg=None):
    """Median seconds for stylize, stage-4 fine-tuning and stage-1 optimization.

    Returns rows ``(task, steps, trials, median_seconds)``.
    """
    stage1_cfg = stage1_cfg or pipeline.stage_config("stage1")
    stage4_cfg = stage4_cfg or pipeline.stage_config("stage4")
    if net.stage == "init":
        net = network.clone(net)
        net.stage = "pretrained"
    content = content_pool[0]
    rows = [
        ("stylize", 1, trials,
         median_time(lambda: pipeline.stylize(net, prompt, content, backends), trials)),
        ("finetune", stage4_cfg.steps, trials,
         median_time(lambda: pipeline.stage4_finetune(net, prompt, content, dist, stage4_cfg, backends), trials)),
        ("stage1", stage1_cfg.steps, trials,
         median_time(lambda: pipeline.stage1_generate_pair(prompt, content_pool, stage1_cfg, backends, dist),
                     trials)),
    ]
    return rows


def write_report(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["task", "steps", "trials", "median_seconds"])
        for task, steps, trials, median in rows:
            writer.writerow([task, steps, trials, f"{median:.6g}"])
