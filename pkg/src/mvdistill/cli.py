"""Command-line entry point for the whole pipeline.

Subcommands: preprocess, synth, pretrain, distill, eval, gradcheck,
export-run.  Configuration files are flat `key = value` lines with `#`
comments and dotted keys; command-line flags override file keys, and every
run directory gets a `config.resolved` snapshot of the effective values.

Exit codes: 0 success, 1 verification failure, 2 input/contract error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import shutil
import sys
from pathlib import Path

import numpy as np

from .data import (
    SyntheticDatasetSpec,
    ViewArrays,
    build_view_arrays,
    generate_synthetic_dataset,
)
from .embeddings import EmbeddingTable, WeightNet, load_embeddings
from .gradcheck import run_gradcheck
from .losses import DistillConfig
from .models import MlpNet, Projector, mlp_from_checkpoint, save_checkpoint
from .training import (
    DivergenceError,
    TrainConfig,
    distill,
    evaluate,
    pretrain_teacher,
    write_class_logits_csv,
    write_metrics_csv,
    write_weights_csv,
)
from .views import (
    PpmParseError,
    RgbImage,
    ViewGenConfig,
    make_views,
    quantize_view,
    read_ppm,
    write_ppm,
    write_views_sidecar,
)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


# ------------------------------------------------------------ config file


def parse_config_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


def write_resolved(values: dict, path: Path) -> None:
    lines = [f"{k} = {values[k]}" for k in sorted(values)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class Config:
    def __init__(self, values: dict[str, str]):
        self.values = dict(values)
        self.resolved: dict[str, object] = {}

    def get(self, key: str, default, cast=None):
        if key in self.values:
            raw = self.values[key]
            if cast is bool:
                val = raw.lower() in ("1", "true", "yes", "on")
            elif cast is not None:
                val = cast(raw)
            else:
                val = type(default)(raw)
        else:
            val = default
        self.resolved[key] = val
        return val

    def int_list(self, key: str, default):
        if key in self.values:
            val = tuple(int(x) for x in self.values[key].split(",") if x.strip())
        else:
            val = tuple(default)
        self.resolved[key] = ",".join(str(x) for x in val)
        return val


def build_configs(cfg: Config, args) -> tuple[SyntheticDatasetSpec, ViewGenConfig, TrainConfig, DistillConfig, dict]:
    spec = SyntheticDatasetSpec(
        n_classes=cfg.get("synth.n_classes", 4),
        samples_per_class=cfg.get("synth.samples_per_class", 200),
        image_size=cfg.get("synth.image_size", 16),
        seed=cfg.get("synth.seed", 0),
    )
    vcfg = ViewGenConfig(
        canny_low=cfg.get("views.canny_low", 100.0),
        canny_high=cfg.get("views.canny_high", 200.0),
        alpha_e=cfg.get("views.alpha_e", 1.5),
        alpha_hf=cfg.get("views.alpha_hf", 1.5),
        gaussian_sigma=cfg.get("views.sigma", 1.0),
        gaussian_kernel=cfg.get("views.kernel", 5),
    )
    tcfg = TrainConfig(
        lr=cfg.get("train.lr", 0.001),
        momentum=cfg.get("train.momentum", 0.9),
        weight_decay=cfg.get("train.weight_decay", 5e-4),
        epochs=cfg.get("train.epochs", 30),
        batch_size=cfg.get("train.batch_size", 32),
        warmup_epochs=cfg.get("train.warmup_epochs", 5),
        decay_epochs=cfg.int_list("train.decay_epochs", (15, 25)),
        decay_factor=cfg.get("train.decay_factor", 0.1),
        seed=cfg.get("train.seed", 0),
        use_edge_view=cfg.get("train.use_edge_view", True, bool) and not getattr(args, "no_edge", False),
        use_hf_view=cfg.get("train.use_hf_view", True, bool) and not getattr(args, "no_hf", False),
        use_feat_loss=cfg.get("train.use_feat_loss", True, bool) and not getattr(args, "no_feat", False),
        use_crd_loss=cfg.get("train.use_crd_loss", True, bool) and not getattr(args, "no_crd", False),
        with_ce=cfg.get("train.with_ce", False, bool) or getattr(args, "with_ce", False),
        pretrain_epochs=cfg.get("train.pretrain_epochs", 120),
        pretrain_lr=cfg.get("train.pretrain_lr", 0.01),
    )
    dcfg = DistillConfig(
        tau_f=cfg.get("distill.tau_f", 2.0),
        tau_l=cfg.get("distill.tau_l", 4.0),
        tau_crd=cfg.get("distill.tau_crd", 2.0),
        alpha=cfg.get("distill.alpha", 2.0),
        beta=cfg.get("distill.beta", 0.01),
        gamma_loss=cfg.get("distill.gamma_loss", 0.1),
        gamma_noise=cfg.get("distill.gamma_noise", 0.01),
        seed=cfg.get("distill.seed", 0),
        scale_logit_kd_by_tau_sq=cfg.get("distill.scale_logit_kd_by_tau_sq", False, bool),
    )
    model = {
        "teacher_hidden": list(cfg.int_list("model.teacher_hidden", (256, 128))),
        "student_hidden": list(cfg.int_list("model.student_hidden", (64,))),
        "d_common": cfg.get("model.d_common", 64),
        "teacher_seed": cfg.get("model.teacher_seed", 1),
        "student_seed": cfg.get("model.student_seed", 2),
        "weightnet_hidden": cfg.get("model.weightnet_hidden", 64),
        "weightnet_seed": cfg.get("model.weightnet_seed", 3),
    }
    # ablation flags resolve into the snapshot so runs are self-describing
    cfg.resolved["train.use_edge_view"] = tcfg.use_edge_view
    cfg.resolved["train.use_hf_view"] = tcfg.use_hf_view
    cfg.resolved["train.use_feat_loss"] = tcfg.use_feat_loss
    cfg.resolved["train.use_crd_loss"] = tcfg.use_crd_loss
    cfg.resolved["train.with_ce"] = tcfg.with_ce
    vanilla = not (tcfg.use_edge_view or tcfg.use_hf_view or tcfg.use_feat_loss or tcfg.use_crd_loss)
    cfg.resolved["run.mode"] = "vanilla-kd" if vanilla else "multi-view"
    return spec, vcfg, tcfg, dcfg, model


# ------------------------------------------------------------ subcommands


def cmd_preprocess(args) -> int:
    in_dir, out_dir = Path(args.input), Path(args.output)
    if not in_dir.is_dir():
        print(f"error: input directory {in_dir} does not exist", file=sys.stderr)
        return EXIT_INPUT
    out_dir.mkdir(parents=True, exist_ok=True)
    vcfg = ViewGenConfig(
        canny_low=args.canny_low,
        canny_high=args.canny_high,
        alpha_e=args.alpha_e,
        alpha_hf=args.alpha_hf,
        gaussian_sigma=args.sigma,
        gaussian_kernel=args.kernel,
    )
    files = sorted(in_dir.glob("*.ppm"))
    errors = []
    for f in files:
        try:
            img = read_ppm(f)
            views = make_views(img, vcfg)
            for kind, view in views.items():
                write_ppm(quantize_view(view), out_dir / f"{f.stem}.{kind}.ppm")
            write_views_sidecar(views, out_dir / f"{f.stem}.views.f64")
            print(f"{f.name}: {img.width}x{img.height} -> 3 views + sidecar")
        except (PpmParseError, ValueError) as e:
            errors.append(f"{f.name}: {e}")
    write_resolved(
        {
            "views.canny_low": args.canny_low, "views.canny_high": args.canny_high,
            "views.alpha_e": args.alpha_e, "views.alpha_hf": args.alpha_hf,
            "views.sigma": args.sigma, "views.kernel": args.kernel,
        },
        out_dir / "config.resolved",
    )
    print(f"{len(files) - len(errors)} files processed")
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    return EXIT_INPUT if errors else EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = SyntheticDatasetSpec(
        n_classes=args.classes,
        samples_per_class=args.per_class,
        image_size=args.size,
        seed=args.seed,
    )
    train, test, names = generate_synthetic_dataset(spec)
    with open(out_dir / "labels.csv", "w", encoding="utf-8") as fh:
        fh.write("file,label,split\n")
        for split, samples in (("train", train), ("test", test)):
            for i, (img, label) in enumerate(samples):
                fname = f"{split}_{i:05d}.ppm"
                write_ppm(img, out_dir / fname)
                fh.write(f"{fname},{label},{split}\n")
    (out_dir / "classes.txt").write_text("\n".join(names) + "\n", encoding="utf-8")
    write_resolved(
        {
            "synth.n_classes": spec.n_classes,
            "synth.samples_per_class": spec.samples_per_class,
            "synth.image_size": spec.image_size,
            "synth.seed": spec.seed,
        },
        out_dir / "config.resolved",
    )
    print(f"wrote {len(train)} train + {len(test)} test images to {out_dir}")
    return EXIT_OK


def _load_dataset(spec: SyntheticDatasetSpec, vcfg: ViewGenConfig):
    train, test, names = generate_synthetic_dataset(spec)
    return build_view_arrays(train, vcfg), build_view_arrays(test, vcfg), names


def cmd_pretrain(args) -> int:
    cfg = Config(parse_config_file(Path(args.config)) if args.config else {})
    spec, vcfg, tcfg, _, model = build_configs(cfg, args)
    run_dir = Path(args.runs_dir) / args.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    train_arr, test_arr, names = _load_dataset(spec, vcfg)
    teacher = MlpNet(train_arr.d_in, model["teacher_hidden"], spec.n_classes, seed=model["teacher_seed"])
    try:
        history = pretrain_teacher(teacher, train_arr, tcfg)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(teacher.parameters(), run_dir / "teacher.ckpt")
    train_m = evaluate(teacher, train_arr.views["rgb"], train_arr.labels, ks=(1,))
    test_m = evaluate(teacher, test_arr.views["rgb"], test_arr.labels, ks=(1,))
    write_resolved(cfg.resolved, run_dir / "config.resolved")
    with open(run_dir / "pretrain.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, l in enumerate(history):
            fh.write(f"{i},{l:.6f}\n")
    print(f"teacher train top-1 {train_m['top1']:.2f}, test top-1 {test_m['top1']:.2f}")
    print(f"checkpoint: {run_dir / 'teacher.ckpt'}")
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = Config(parse_config_file(Path(args.config)) if args.config else {})
    spec, vcfg, tcfg, dcfg, model = build_configs(cfg, args)
    try:
        table = load_embeddings(Path(args.embeddings))
    except (OSError, ValueError) as e:
        print(f"error: cannot load embeddings: {e}", file=sys.stderr)
        return EXIT_INPUT

    run_dir = Path(args.runs_dir) / args.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    train_arr, test_arr, names = _load_dataset(spec, vcfg)

    missing = [
        f"{name}/{kind}"
        for name in names
        for kind in ("rgb", "edge", "hf")
        if f"{name}/{kind}" not in table.entries
    ]
    if missing:
        print("error: embeddings missing keys: " + ", ".join(missing), file=sys.stderr)
        return EXIT_INPUT

    teacher = (
        mlp_from_checkpoint(Path(args.teacher_checkpoint))
        if args.teacher_checkpoint
        else MlpNet(train_arr.d_in, model["teacher_hidden"], spec.n_classes, seed=model["teacher_seed"])
    )
    if not args.teacher_checkpoint:
        try:
            pretrain_teacher(teacher, train_arr, tcfg)
        except DivergenceError as e:
            print(f"error: teacher pretraining diverged: {e}", file=sys.stderr)
            return EXIT_NUMERIC

    student = MlpNet(train_arr.d_in, model["student_hidden"], spec.n_classes, seed=model["student_seed"])
    weightnet = WeightNet(table.dim, hidden=model["weightnet_hidden"], seed=model["weightnet_seed"])
    proj_feat = Projector(student.d_feat, teacher.d_feat, seed=model["student_seed"] + 10)
    proj_crd_s = Projector(student.d_feat, model["d_common"], seed=model["student_seed"] + 11)
    proj_crd_t = Projector(table.dim, model["d_common"], seed=model["student_seed"] + 12)

    try:
        result = distill(
            teacher, student, weightnet, proj_feat, proj_crd_s, proj_crd_t,
            table, train_arr, test_arr, names, tcfg, dcfg,
        )
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC

    write_metrics_csv(result.metrics, run_dir / "metrics.csv")
    write_weights_csv(result.metrics, run_dir / "weights.csv")
    write_class_logits_csv(
        result.student, test_arr.views["rgb"], test_arr.labels, names, run_dir / "logits.csv"
    )
    best = MlpNet(train_arr.d_in, model["student_hidden"], spec.n_classes, seed=model["student_seed"])
    for name, p in best.parameters():
        p.data = result.best_state[name].copy()
    save_checkpoint(best.parameters(), run_dir / "student.ckpt")
    write_resolved(cfg.resolved, run_dir / "config.resolved")
    print(f"best test top-1 {result.best_test_top1:.2f}")
    print(f"run artifacts in {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt, data_dir = Path(args.checkpoint), Path(args.data)
    if not ckpt.is_file() or not data_dir.is_dir():
        print("error: checkpoint or data directory missing", file=sys.stderr)
        return EXIT_INPUT
    net = mlp_from_checkpoint(ckpt)
    xs, ys = [], []
    labels_file = data_dir / "labels.csv"
    if not labels_file.is_file():
        print(f"error: {labels_file} missing", file=sys.stderr)
        return EXIT_INPUT
    for line in labels_file.read_text(encoding="utf-8").splitlines()[1:]:
        fname, label, _split = line.split(",")
        img = read_ppm(data_dir / fname)
        xs.append(img.pixels.astype(np.float64).reshape(-1) / 255.0)
        ys.append(int(label))
    xs, ys = np.stack(xs), np.asarray(ys)
    m = evaluate(net, xs, ys, ks=(1, min(5, net.n_classes)))
    print(
        f"top1 {m['top1']:.6f} top{min(5, net.n_classes)} "
        f"{m[f'top{min(5, net.n_classes)}']:.6f} macro_recall {m['macro_recall']:.6f}"
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed, trials=args.trials, tol=args.tol)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_export_run(args) -> int:
    run_dir = Path(args.runs_dir) / args.run
    if not run_dir.is_dir():
        print(f"error: run directory {run_dir} does not exist", file=sys.stderr)
        return EXIT_INPUT
    export_dir = run_dir / "export"
    export_dir.mkdir(exist_ok=True)
    copied = 0
    for name in ("metrics.csv", "weights.csv", "logits.csv", "config.resolved"):
        src = run_dir / name
        if src.is_file():
            shutil.copyfile(src, export_dir / name)
            copied += 1
    print(f"exported {copied} files to {export_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvdistill", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", help="build view triplets for a directory of PPM images")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--alpha-e", type=float, default=1.5)
    sp.add_argument("--alpha-hf", type=float, default=1.5)
    sp.add_argument("--canny-low", type=float, default=100.0)
    sp.add_argument("--canny-high", type=float, default=200.0)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--kernel", type=int, default=5)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("synth", help="generate the synthetic dataset as PPM files")
    sp.add_argument("--output", required=True)
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--per-class", type=int, default=200)
    sp.add_argument("--size", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("pretrain", help="pretrain the teacher on the RGB view")
    sp.add_argument("--config", default=None)
    sp.add_argument("--run-name", required=True)
    sp.add_argument("--runs-dir", default="runs")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("distill", help="run multi-view distillation")
    sp.add_argument("--config", default=None)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--run-name", required=True)
    sp.add_argument("--runs-dir", default="runs")
    sp.add_argument("--teacher-checkpoint", default=None)
    sp.add_argument("--no-edge", action="store_true", help="disable the edge view")
    sp.add_argument("--no-hf", action="store_true", help="disable the high-frequency view")
    sp.add_argument("--no-feat", action="store_true", help="disable the feature loss")
    sp.add_argument("--no-crd", action="store_true", help="disable the contrastive loss")
    sp.add_argument("--with-ce", action="store_true", help="add a supervised CE term")
    sp.set_defaults(func=cmd_distill)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a PPM directory")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the full loss graph")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("export-run", help="bundle run CSVs into a plot-ready directory")
    sp.add_argument("--run", required=True)
    sp.add_argument("--runs-dir", default="runs")
    sp.set_defaults(func=cmd_export_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
