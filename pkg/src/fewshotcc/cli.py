"""Command-line surface.

Subcommands: synth, cct, tasks, train, adapt, eval, report. Every command
is deterministic given its configuration and seeds. Exit codes: 0 success,
1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from . import dataio, evaluation, meta, nn, svgplot, synthcam
from . import tasks as taskdef


class _Parser(argparse.ArgumentParser):
    """argparse with validation failures mapped to exit code 1."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(parser):
    parser.add_argument("-c", "--config", help="config file (key = value lines)")
    parser.add_argument(
        "-o",
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    parser.add_argument("--workers", type=int, help="parallelism cap (overrides key 'workers')")


def _runconfig(args) -> cfg.RunConfig:
    file_values = cfg.parse_config_file(args.config) if args.config else {}
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    return cfg.build_config(file_values, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fewshotcc",
        description="Few-shot camera-adaptive color constancy pipeline.",
        epilog=cfg.defaults_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-camera dataset")
    _add_common(p)
    p.add_argument("out_dir", help="output directory")
    p.add_argument("--seed", type=int, help="master seed (overrides synth.seed)")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("cct", help="compute per-image color temperatures")
    _add_common(p)
    p.add_argument("manifest", help="dataset manifest CSV")
    p.add_argument("--out", help="output CSV (default: <manifest dir>/cct.csv)")
    p.set_defaults(fn=cmd_cct)

    p = sub.add_parser("tasks", help="bin images into tasks and dump them")
    _add_common(p)
    p.add_argument("manifest")
    p.add_argument("--m", type=int, help="histogram bins (overrides tasks.m)")
    p.add_argument("--knn", type=int, metavar="K", help="build one K-nearest-temperature task")
    p.add_argument("--anchor", type=float, help="anchor CCT for --knn")
    p.add_argument("--camera", help="camera for --knn")
    p.add_argument("--out-dir", help="output directory (default: manifest dir)")
    p.set_defaults(fn=cmd_tasks)

    p = sub.add_parser("train", help="meta-train or train the joint baseline")
    _add_common(p)
    p.add_argument("manifest")
    p.add_argument("--tasks", help="task JSONL from `fewshotcc tasks` (default: recompute)")
    p.add_argument("--out", default="checkpoint.fscc", help="checkpoint path")
    p.add_argument("--log", default="train_log.csv", help="training log CSV path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("adapt", help="K-shot adapt a checkpoint to one camera task")
    _add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--camera", required=True)
    p.add_argument("--bin", type=int, default=None, help="task bin index (default: first task)")
    p.add_argument("--k", type=int, help="support size (default eval.k_test)")
    p.add_argument("--n", type=int, help="inner steps (default eval.n_test)")
    p.add_argument("--seed", type=int, help="support sampling seed (default eval.seed)")
    p.add_argument("--out", default="adapted.fscc")
    p.set_defaults(fn=cmd_adapt)

    p = sub.add_parser("eval", help="run the multi-draw K-shot evaluation")
    _add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--tasks", help="task JSONL from `fewshotcc tasks` (default: recompute)")
    p.add_argument("--camera", help="held-out camera (default: from checkpoint config)")
    p.add_argument("--k-test", type=int, help="overrides eval.k_test")
    p.add_argument("--n-test", type=int, help="overrides eval.n_test")
    p.add_argument("--draws", type=int, help="overrides eval.draws")
    p.add_argument("--seed", type=int, help="overrides eval.seed")
    p.add_argument("--out", default="report.csv")
    p.add_argument("--svg", default=None, help="median-vs-updates chart path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="merge eval reports; add cross-camera geometric means")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help="eval report CSVs")
    p.add_argument("--out", default="combined_report.csv")
    p.set_defaults(fn=cmd_report)

    return parser


def _load_dataset(manifest_path: str) -> dict:
    manifest = dataio.load_manifest(manifest_path)
    return dataio.load_processed(manifest)


def _task_index(images: dict, rc: cfg.RunConfig, m: int | None = None) -> taskdef.TaskIndex:
    return taskdef.build_task_index(
        images,
        m=m if m is not None else rc["tasks.m"],
        min_task_size=rc["tasks.min_task_size"],
        global_edges=rc["tasks.global_edges"],
        degenerate=rc["tasks.degenerate"],
        max_locus_distance=rc["tasks.max_locus_distance"],
    )


def cmd_synth(args) -> int:
    rc = _runconfig(args)
    sc = rc.synth_config(args.out_dir)
    if args.seed is not None:
        sc.master_seed = args.seed
    manifest = synthcam.generate_dataset(sc, workers=rc["workers"])
    print(f"wrote {manifest}: {sc.cameras} cameras x {sc.scenes_per_camera} scenes")
    return 0


def cmd_cct(args) -> int:
    rc = _runconfig(args)
    images = _load_dataset(args.manifest)
    out = Path(args.out) if args.out else Path(args.manifest).parent / "cct.csv"
    per_camera: dict = {}
    skipped = 0
    with open(out, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["image_id", "camera_id", "cct_kelvin"])
        for image_id in sorted(images):
            img = images[image_id]
            try:
                cct = taskdef.image_cct(img, max_locus_distance=rc["tasks.max_locus_distance"])
            except ValueError:
                skipped += 1
                continue
            writer.writerow([image_id, img.camera_id, repr(cct)])
            per_camera.setdefault(img.camera_id, []).append(cct)
    for camera_id in sorted(per_camera):
        vals = per_camera[camera_id]
        print(
            f"{camera_id}: {len(vals)} images, CCT {min(vals):.0f}-{max(vals):.0f} K"
        )
    print(f"wrote {out} ({skipped} images skipped)")
    return 0


def cmd_tasks(args) -> int:
    rc = _runconfig(args)
    images = _load_dataset(args.manifest)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.manifest).parent
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.knn is not None:
        if not args.camera or args.anchor is None:
            raise ValueError("--knn requires --camera and --anchor")
        members = {}
        for image_id in sorted(images):
            img = images[image_id]
            if img.camera_id != args.camera:
                continue
            try:
                members[image_id] = taskdef.image_cct(
                    img, max_locus_distance=rc["tasks.max_locus_distance"]
                )
            except ValueError:
                continue
        task = taskdef.knn_task(members, args.anchor, args.knn, args.camera)
        task_path = out_dir / "tasks.jsonl"
        taskdef.dump_tasks([task], task_path)
        print(f"wrote {task_path}: 1 KNN task of {len(task.member_ids)} images")
        return 0

    index = _task_index(images, rc, m=args.m)
    task_path = out_dir / "tasks.jsonl"
    taskdef.dump_tasks(index.tasks, task_path)

    hist_path = out_dir / "histograms.csv"
    with open(hist_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["camera_id", "bin_index", "edge_lo_kelvin", "edge_hi_kelvin", "count"])
        for camera_id in sorted(index.histograms):
            hist = index.histograms[camera_id]
            for b in range(hist.m):
                writer.writerow(
                    [camera_id, b, repr(float(hist.edges[b])), repr(float(hist.edges[b + 1])), int(hist.counts[b])]
                )

    groups: dict = {}
    for task in index.tasks:
        label = f"bin {task.bin_index}"
        group = groups.setdefault(label, {"name": label, "xs": [], "ys": []})
        for member in task.member_ids:
            gt = images[member].gt_illuminant
            group["xs"].append(gt.r / gt.g)
            group["ys"].append(gt.b / gt.g)
    svg_path = out_dir / "gains.svg"
    svg_path.write_text(
        svgplot.scatter_chart(
            [groups[k] for k in sorted(groups)],
            title="ground-truth gains by temperature bin",
            xlabel="r/g",
            ylabel="b/g",
        )
    )
    print(
        f"wrote {task_path} ({len(index.tasks)} tasks), {hist_path}, {svg_path}; "
        f"{len(index.skipped)} images skipped"
    )
    return 0


def cmd_train(args) -> int:
    rc = _runconfig(args)
    logging.getLogger("fewshotcc.meta").setLevel(logging.INFO)
    images = _load_dataset(args.manifest)
    tc = rc.train_config()
    if tc.variant == "baseline":
        result = meta.train_baseline(tc, images)
    else:
        if args.tasks:
            task_list = taskdef.load_tasks(args.tasks)
        else:
            task_list = _task_index(images, rc).tasks
        result = meta.meta_train(tc, images, task_list)
    nn.save_checkpoint(result.checkpoint, args.out)
    meta.write_train_log(result.log_rows, args.log)
    first = result.log_rows[0][2]
    last = result.log_rows[-1][2]
    print(
        f"trained {tc.variant} for {tc.iterations} iterations: "
        f"outer loss {first:.3f} -> {last:.3f} deg; wrote {args.out}, {args.log}"
    )
    return 0


def cmd_adapt(args) -> int:
    rc = _runconfig(args)
    ckpt = nn.load_checkpoint(args.checkpoint)
    images = _load_dataset(args.manifest)
    index = _task_index(images, rc)
    camera_tasks = index.for_camera(args.camera)
    if not camera_tasks:
        raise ValueError(f"no tasks for camera {args.camera!r}")
    if args.bin is not None:
        camera_tasks = [t for t in camera_tasks if t.bin_index == args.bin]
        if not camera_tasks:
            raise ValueError(f"camera {args.camera!r} has no bin {args.bin}")
    task = camera_tasks[0]
    k = args.k if args.k is not None else rc["eval.k_test"]
    n = args.n if args.n is not None else rc["eval.n_test"]
    seed = args.seed if args.seed is not None else rc["eval.seed"]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    episode = taskdef.sample_episode(task, k, 0, rng)
    sx, sy = meta.prepare_batch(images, episode.support_ids, ckpt.spec.input_size)
    predictor = meta.adapt(ckpt, sx, sy, n, source_tasks=[task.key] * k)
    adapted = nn.Checkpoint(
        params=nn.NetworkParams(spec=ckpt.spec, theta=predictor.theta),
        alpha=ckpt.alpha,
        config={**ckpt.config, "adapted_from": str(args.checkpoint), "adapt_task": list(task.key[:2])},
        iterations=ckpt.iterations,
    )
    nn.save_checkpoint(adapted, args.out)
    print(f"adapted on task {task.key} with K={k}, n={n}; wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    rc = _runconfig(args)
    ckpt = nn.load_checkpoint(args.checkpoint)
    images = _load_dataset(args.manifest)
    if args.tasks:
        task_list = taskdef.load_tasks(args.tasks)
        by_image = {m: t for t in task_list for m in t.member_ids}

        def task_of(image_id):
            return by_image[image_id]
    else:
        task_of = _task_index(images, rc).task_of
    camera = args.camera or ckpt.config.get("held_out_camera") or ""
    if not camera:
        raise ValueError("no camera given and the checkpoint has no held_out_camera")
    k_test = args.k_test if args.k_test is not None else rc["eval.k_test"]
    n_test = args.n_test if args.n_test is not None else rc["eval.n_test"]
    draws = args.draws if args.draws is not None else rc["eval.draws"]
    seed = args.seed if args.seed is not None else rc["eval.seed"]
    report = evaluation.evaluate(
        ckpt,
        images,
        task_of,
        camera,
        k_test=k_test,
        n_test=n_test,
        draws=draws,
        seed=seed,
        chunk_size=rc["eval.chunk_size"],
    )
    variant = str(ckpt.config.get("variant", "unknown"))
    evaluation.write_report([evaluation.report_row(report, variant)], args.out)
    if args.svg:
        curve, std = report.median_curve()
        chart = svgplot.line_chart(
            [
                {
                    "name": f"{variant} K={k_test}",
                    "xs": list(range(n_test + 1)),
                    "ys": list(curve),
                    "err": list(std),
                }
            ],
            title=f"median angular error vs. inner updates ({camera})",
            xlabel="inner updates",
            ylabel="median angular error (deg)",
        )
        Path(args.svg).write_text(chart)
    print(
        f"camera {camera}: headline median over {draws} draws = {report.headline:.3f} deg "
        f"(K_test={k_test}, n_test={n_test}); wrote {args.out}"
    )
    return 0


def cmd_report(args) -> int:
    _runconfig(args)
    rows = []
    for path in args.inputs:
        rows.extend(evaluation.read_report(path))
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["variant"], row["k_test"], row["n_test"]), []).append(row)
    combined = list(rows)
    for (variant, k_test, n_test), group in sorted(groups.items()):
        if len(group) < 2:
            continue
        agg = evaluation.cross_camera_gm(
            [
                evaluation.AngularErrorStats(**{f: row[f] for f in evaluation.FIELDS})
                for row in group
            ]
        )
        headline_gm = float(
            np.exp(np.mean(np.log([max(row["headline_median_over_draws"], 1e-300) for row in group])))
        )
        combined.append(
            {
                "camera": "ALL(gm)",
                "variant": variant,
                "k_test": k_test,
                "n_test": n_test,
                **{f: getattr(agg, f) for f in evaluation.FIELDS},
                "headline_median_over_draws": headline_gm,
            }
        )
    evaluation.write_report(combined, args.out)
    print(f"wrote {args.out} ({len(combined)} rows from {len(args.inputs)} input reports)")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError) as exc:
        print(f"fewshotcc {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fewshotcc {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
