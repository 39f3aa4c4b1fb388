"""Training loops: teacher pretraining, distillation, SGD, and evaluation.

Everything is deterministic given the configured seeds: one PCG64 stream
drives batch shuffling and feature noise, batches are consumed in fixed
order, and reductions run in index order.  The teacher is frozen for the
whole distillation run; the trainable set is exactly the student, the
projectors of the enabled loss terms, and the fusion weight network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ViewArrays
from .embeddings import EmbeddingTable, WeightNet, fuse_batch, weightnet_forward
from .losses import (
    DistillConfig,
    crd_loss,
    feature_loss,
    logit_loss,
    perturb_teacher_feature,
    total_loss,
)
from .models import MlpNet, Projector, cross_entropy
from .tensor import ContractError, NumericError, Tensor


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    batch_size: int = 32
    warmup_epochs: int = 5
    decay_epochs: tuple[int, ...] = (15, 25)
    decay_factor: float = 0.1
    seed: int = 0
    use_edge_view: bool = True
    use_hf_view: bool = True
    use_feat_loss: bool = True
    use_crd_loss: bool = True
    with_ce: bool = False
    # teacher pretraining is plain supervised learning, not part of the
    # distillation recipe, so it gets its own budget and step size
    pretrain_epochs: int = 120
    pretrain_lr: float = 0.01

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not (0 <= self.momentum < 1):
            raise ConfigError("momentum must be in [0, 1)")
        de = tuple(self.decay_epochs)
        if any(b <= a for a, b in zip(de, de[1:])) or any(d >= self.epochs for d in de):
            raise ConfigError("decay epochs must be strictly increasing and < epochs")
        self.decay_epochs = de


@dataclass
class MetricsRow:
    epoch: int
    l_feat: float
    l_logit: float
    l_crd: float
    l_all: float
    train_top1: float
    test_top1: float
    test_top5: float
    macro_recall: float
    w_rgb: float
    w_edge: float
    w_hf: float


@dataclass
class DistillResult:
    student: MlpNet
    metrics: list[MetricsRow]
    best_state: dict[str, np.ndarray]
    best_test_top1: float


def lr_at(cfg: TrainConfig, epoch: int, base: float | None = None) -> float:
    base = cfg.lr if base is None else base
    if epoch < cfg.warmup_epochs:
        return base * (epoch + 1) / cfg.warmup_epochs
    passed = sum(1 for d in cfg.decay_epochs if epoch >= d)
    return base * cfg.decay_factor**passed


def sgd_step(
    params: list[tuple[str, Tensor]],
    state: dict[str, np.ndarray],
    cfg: TrainConfig,
    lr: float,
) -> None:
    for name, p in params:
        if p.grad is None:
            raise ContractError(f"trainable parameter {name!r} has no gradient")
        v = state.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = cfg.momentum * v + (p.grad + cfg.weight_decay * p.data)
        state[name] = v
        p.data = p.data - lr * v


def evaluate(net: MlpNet, xs: np.ndarray, ys: np.ndarray, ks=(1, 5)) -> dict[str, float]:
    """Top-k accuracy (ties broken toward the lower class index) and macro recall."""
    n_classes = net.n_classes
    for k in ks:
        if k > n_classes:
            raise ConfigError(f"top-{k} undefined with {n_classes} classes")
    _, logits = net.forward(Tensor(xs))
    z = logits.data
    # stable argsort of -logits: equal logits keep ascending class order
    ranked = np.argsort(-z, axis=1, kind="stable")
    out: dict[str, float] = {}
    for k in ks:
        hits = (ranked[:, :k] == ys[:, None]).any(axis=1)
        out[f"top{k}"] = 100.0 * hits.mean()
    pred = ranked[:, 0]
    recalls = []
    for c in range(n_classes):
        mask = ys == c
        if mask.any():
            recalls.append((pred[mask] == c).mean())
    out["macro_recall"] = 100.0 * float(np.mean(recalls))
    return out


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        if len(idx) >= 2:
            yield idx


def pretrain_teacher(teacher: MlpNet, data: ViewArrays, cfg: TrainConfig) -> list[float]:
    """Cross-entropy training on the RGB view; returns per-epoch mean losses."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    xs, ys = data.views["rgb"], data.labels
    params = teacher.parameters()
    state: dict[str, np.ndarray] = {}
    # pretrain schedule scales with its own budget: warmup then x0.1 steps
    # at 50% and 83% of the pretrain epochs
    decays = (cfg.pretrain_epochs // 2, (5 * cfg.pretrain_epochs) // 6)
    history = []
    for epoch in range(cfg.pretrain_epochs):
        lr = cfg.pretrain_lr * min(1.0, (epoch + 1) / cfg.warmup_epochs)
        lr *= cfg.decay_factor ** sum(1 for d in decays if epoch >= d)
        losses = []
        for idx in _batches(data.n, cfg.batch_size, rng):
            try:
                _, logits = teacher.forward(Tensor(xs[idx]))
                loss = cross_entropy(logits, ys[idx])
            except NumericError:
                # a NaN inside the graph is divergence, not bad input
                raise DivergenceError(epoch) from None
            if not np.isfinite(loss.item()):
                raise DivergenceError(epoch)
            loss.backward()
            sgd_step(params, state, cfg, lr)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    return history


def _active_views(cfg: TrainConfig) -> tuple[tuple[bool, bool, bool], list[str]]:
    active = (True, cfg.use_edge_view, cfg.use_hf_view)
    kinds = [k for k, a in zip(("rgb", "edge", "hf"), active) if a]
    return active, kinds


def _class_weights(
    weightnet: WeightNet,
    table: EmbeddingTable,
    class_names: list[str],
    active: tuple[bool, bool, bool],
) -> dict[int, Tensor]:
    out = {}
    for cls, name in enumerate(class_names):
        t_rgb, t_edge, t_hf = table.lookup_class(name)
        out[cls] = weightnet_forward(
            weightnet,
            Tensor(np.asarray(t_rgb, dtype=np.float64)),
            Tensor(np.asarray(t_edge, dtype=np.float64)),
            Tensor(np.asarray(t_hf, dtype=np.float64)),
            active=active,
        )
    return out


def mean_fusion_weights(
    weightnet: WeightNet,
    table: EmbeddingTable,
    class_names: list[str],
    cfg: TrainConfig,
) -> tuple[float, float, float]:
    """Mean per-class fusion weights, zero-filled for disabled views."""
    active, kinds = _active_views(cfg)
    weights = _class_weights(weightnet, table, class_names, active)
    acc = np.zeros(3)
    for w in weights.values():
        full = np.zeros(3)
        full[[i for i, a in enumerate(active) if a]] = w.data
        acc += full
    acc /= len(weights)
    return float(acc[0]), float(acc[1]), float(acc[2])


def distill(
    teacher: MlpNet,
    student: MlpNet,
    weightnet: WeightNet,
    proj_feat: Projector,
    proj_crd_s: Projector,
    proj_crd_t: Projector,
    table: EmbeddingTable,
    train_data: ViewArrays,
    test_data: ViewArrays,
    class_names: list[str],
    cfg: TrainConfig,
    dcfg: DistillConfig,
) -> DistillResult:
    for name in class_names:
        table.lookup_class(name)  # abort before epoch 0 on a missing key
    teacher.freeze()

    active, kinds = _active_views(cfg)
    params = list(student.parameters())
    if cfg.use_feat_loss:
        params += [(f"proj_feat.{n}", p) for n, p in proj_feat.parameters()]
    if cfg.use_crd_loss:
        params += [(f"proj_crd_s.{n}", p) for n, p in proj_crd_s.parameters()]
        params += [(f"proj_crd_t.{n}", p) for n, p in proj_crd_t.parameters()]
    params += weightnet.parameters()

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    state: dict[str, np.ndarray] = {}
    ys = train_data.labels
    text_by_class = {
        cls: np.asarray(table.lookup_class(name)[0], dtype=np.float64)
        for cls, name in enumerate(class_names)
    }

    metrics: list[MetricsRow] = []
    best_state: dict[str, np.ndarray] = {}
    best_top1 = -1.0
    top_k = min(5, student.n_classes)

    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        sums = np.zeros(4)
        nb = 0
        for idx in _batches(train_data.n, cfg.batch_size, rng):
            try:
                x_rgb = Tensor(train_data.views["rgb"][idx])
                f_s, z_s = student.forward(x_rgb)

                teach_feats = []
                for kind in kinds:
                    f_t, _ = teacher.forward(Tensor(train_data.views[kind][idx]))
                    teach_feats.append(f_t)

                w_by_class = _class_weights(weightnet, table, class_names, active)
                wmat = T.stack_rows([w_by_class[int(y)] for y in ys[idx]])
                fused = fuse_batch(wmat, teach_feats)

                l_feat = None
                if cfg.use_feat_loss:
                    f_tilde = perturb_teacher_feature(fused, dcfg.gamma_noise, rng)
                    l_feat = feature_loss(proj_feat(f_s), f_tilde, dcfg.tau_f)

                z_t = teacher.logits_from_feature(fused)
                l_logit = logit_loss(z_t, z_s, dcfg.tau_l, dcfg.scale_logit_kd_by_tau_sq)

                l_crd = None
                if cfg.use_crd_loss:
                    z_s_emb = T.l2_normalize(proj_crd_s(f_s))
                    t_batch = Tensor(np.stack([text_by_class[int(y)] for y in ys[idx]]))
                    z_txt = T.l2_normalize(proj_crd_t(t_batch))
                    l_crd = crd_loss(z_s_emb, z_txt, dcfg.tau_crd)

                total, report = total_loss(dcfg, l_feat, l_logit, l_crd)
                if cfg.with_ce:
                    total = T.add(total, cross_entropy(z_s, ys[idx]))
            except NumericError:
                # a NaN inside the graph is divergence, not bad input
                raise DivergenceError(epoch) from None
            if not np.isfinite(total.item()):
                raise DivergenceError(epoch)
            total.backward()
            sgd_step(params, state, cfg, lr)
            sums += (report.l_feat, report.l_logit, report.l_crd, report.l_all)
            nb += 1

        try:
            train_m = evaluate(student, train_data.views["rgb"], ys, ks=(1,))
            test_m = evaluate(student, test_data.views["rgb"], test_data.labels, ks=(1, top_k))
            w_rgb, w_edge, w_hf = mean_fusion_weights(weightnet, table, class_names, cfg)
        except NumericError:
            raise DivergenceError(epoch) from None
        metrics.append(
            MetricsRow(
                epoch=epoch,
                l_feat=sums[0] / nb,
                l_logit=sums[1] / nb,
                l_crd=sums[2] / nb,
                l_all=sums[3] / nb,
                train_top1=train_m["top1"],
                test_top1=test_m["top1"],
                test_top5=test_m[f"top{top_k}"],
                macro_recall=test_m["macro_recall"],
                w_rgb=w_rgb,
                w_edge=w_edge,
                w_hf=w_hf,
            )
        )
        if test_m["top1"] > best_top1:
            best_top1 = test_m["top1"]
            best_state = {n: p.data.copy() for n, p in student.parameters()}

    return DistillResult(student, metrics, best_state, best_top1)


METRICS_COLUMNS = [
    "epoch", "l_feat", "l_logit", "l_crd", "l_all",
    "train_top1", "test_top1", "test_top5", "macro_recall",
    "w_rgb", "w_edge", "w_hf",
]


def write_metrics_csv(rows: list[MetricsRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for r in rows:
            vals = [str(r.epoch)] + [
                f"{getattr(r, c):.6f}" for c in METRICS_COLUMNS[1:]
            ]
            fh.write(",".join(vals) + "\n")


def write_weights_csv(rows: list[MetricsRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,w_rgb,w_edge,w_hf\n")
        for r in rows:
            fh.write(f"{r.epoch},{r.w_rgb:.6f},{r.w_edge:.6f},{r.w_hf:.6f}\n")


def write_class_logits_csv(net: MlpNet, xs: np.ndarray, ys: np.ndarray, class_names, path) -> None:
    _, logits = net.forward(Tensor(xs))
    z = logits.data
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("class," + ",".join(f"logit_{i}" for i in range(net.n_classes)) + "\n")
        for c, name in enumerate(class_names):
            row = z[ys == c].mean(axis=0)
            fh.write(name + "," + ",".join(f"{v:.6f}" for v in row) + "\n")
