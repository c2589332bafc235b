"""Training loop, evaluation, gradient checking, and diagnostic exports.

Training is deliberately deterministic: single-threaded torch, seeded model
construction, and a seed-determined batch order, so two runs with the same
config and data produce bitwise-identical checkpoints.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .data_model import DatasetManifest
from .imgio import load_png, to_model_input
from .metrics import MetricReport, compute_report
from .model import (
    AdapterConfig,
    EncoderConfig,
    ModelConfig,
    SceneClassifier,
    build_model,
    infer,
    parameter_count,
    parameter_groups,
    single_backbone_parameter_count,
    trainable_parameters,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 16
    epochs: int = 1
    max_steps: int | None = None
    seed: int = 0
    optimizer: str = "adam"
    # ablation / fusion selection
    fusion: str = "cat"
    acf: bool = True
    mls: bool = True
    aft: bool = True
    # model profile
    input_resize: int = 32
    patch_size: int = 4
    embed_dim: int = 32
    depth: int = 4
    num_heads: int = 4
    window_size: int | None = None  # None = one window covering the grid
    adapter_bottleneck: int | None = None
    adapter_scale: float = 0.1
    acf_token_query: bool = False
    acf_global_kv: str = "global"
    device: str = "cpu"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.fusion == "cat" and self.mls and not self.acf:
            raise ValueError("mls requires acf")

    def encoder_config(self) -> EncoderConfig:
        grid = self.input_resize // self.patch_size
        return EncoderConfig(
            input_resize=self.input_resize,
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depth=self.depth,
            num_heads=self.num_heads,
            window_size=self.window_size if self.window_size is not None else grid,
        )

    def model_config(self, num_classes: int) -> ModelConfig:
        adapter = (
            AdapterConfig(bottleneck_dim=self.adapter_bottleneck, scale=self.adapter_scale)
            if self.aft
            else None
        )
        return ModelConfig(
            num_classes=num_classes,
            encoder=self.encoder_config(),
            adapter=adapter,
            fusion=self.fusion,
            use_acf=self.acf,
            use_mls=self.mls,
            acf_token_query=self.acf_token_query,
            acf_global_kv=self.acf_global_kv,
        )


@dataclass
class RunLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    total_params: int = 0
    trainable_params: int = 0
    seconds_per_sample: float = 0.0

    def save_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w") as fh:
            fh.write(
                json.dumps(
                    {
                        "kind": "run",
                        "total_params": self.total_params,
                        "trainable_params": self.trainable_params,
                        "seconds_per_sample": self.seconds_per_sample,
                    }
                )
                + "\n"
            )
            for rec in self.steps:
                fh.write(json.dumps({"kind": "step", **rec}) + "\n")
            for rec in self.epochs:
                fh.write(json.dumps({"kind": "epoch", **rec}) + "\n")


@dataclass
class SplitArrays:
    """A split preloaded as model-ready tensors."""

    ids: list[str]
    labels: torch.Tensor  # (N,)
    center: torch.Tensor  # (N, 3, r, r)
    surrounding: torch.Tensor
    global_: torch.Tensor

    def __len__(self) -> int:
        return len(self.ids)

    def batch(self, idx: np.ndarray) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        i = torch.as_tensor(idx, dtype=torch.long)
        return self.center[i], self.surrounding[i], self.global_[i], self.labels[i]


def load_split(manifest: DatasetManifest, split: str, input_resize: int) -> SplitArrays:
    samples = [s for s in manifest.samples if s.split == split] if split != "all" else list(manifest.samples)
    if not samples:
        raise ValueError(f"manifest has no samples in split {split!r}")
    centers, surrounds, globals_ = [], [], []
    for s in samples:
        centers.append(to_model_input(load_png(manifest.resolve(s.center)), input_resize))
        surrounds.append(to_model_input(load_png(manifest.resolve(s.surrounding)), input_resize))
        globals_.append(to_model_input(load_png(manifest.resolve(s.global_)), input_resize))
    return SplitArrays(
        ids=[s.sample_id for s in samples],
        labels=torch.tensor([s.label for s in samples], dtype=torch.long),
        center=torch.from_numpy(np.stack(centers)),
        surrounding=torch.from_numpy(np.stack(surrounds)),
        global_=torch.from_numpy(np.stack(globals_)),
    )


def model_state_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def load_model_from_checkpoint(path: str | Path) -> tuple[SceneClassifier, dict]:
    params, meta = load_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    model = build_model(cfg, seed=meta.get("build_seed", 0))
    state = {k: torch.from_numpy(v) for k, v in params.items()}
    model.load_state_dict(state)
    model.eval()
    return model, meta


@dataclass
class TrainResult:
    model: SceneClassifier
    best_state: dict[str, np.ndarray]
    runlog: RunLog
    best_val_ba: float
    checkpoint_path: Path | None = None

    def best_model(self) -> SceneClassifier:
        """The model restored to the best-validation-BA checkpoint."""
        self.model.load_state_dict({k: torch.from_numpy(v) for k, v in self.best_state.items()})
        self.model.eval()
        return self.model


def _forward(model: SceneClassifier, c, s, g):
    return model(c, s, g) if model.cfg.fusion not in ("center",) and not (
        model.cfg.fusion == "cat" and not model.cfg.use_acf
    ) else model(c)


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Optimize the trainable parameters; checkpoint at best validation BA."""
    torch.set_num_threads(1)  # fixed op scheduling for the determinism contract
    num_classes = manifest.taxonomy.num_classes
    model = build_model(config.model_config(num_classes), seed=config.seed)
    params = trainable_parameters(model)
    optimizer = torch.optim.Adam(
        [params[k] for k in sorted(params)],
        lr=config.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
    )

    train_data = load_split(manifest, "train", config.input_resize)
    val_data = load_split(manifest, "val", config.input_resize)

    runlog = RunLog()
    runlog.total_params, runlog.trainable_params = parameter_count(model)

    best_ba = -1.0
    best_state = model_state_arrays(model)
    step = 0
    samples_seen = 0
    t0 = time.perf_counter()
    stop = False
    for epoch in range(config.epochs):
        order_rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(epoch,)))
        order = order_rng.permutation(len(train_data))
        model.train()
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            c, s, g, labels = train_data.batch(idx)
            outputs = _forward(model, c, s, g)
            losses = model.loss_terms(outputs, labels)
            loss = losses["loss_all"]
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            runlog.steps.append(
                {"step": step, **{k: float(v.detach()) for k, v in losses.items()}}
            )
            step += 1
            samples_seen += len(idx)
            if config.max_steps is not None and step >= config.max_steps:
                stop = True
                break
        report, _ = evaluate_model(model, val_data, num_classes)
        runlog.epochs.append({"epoch": epoch, "val": report.to_dict()})
        if report.ba > best_ba:
            best_ba = report.ba
            best_state = model_state_arrays(model)
        if stop:
            break
    if samples_seen:
        runlog.seconds_per_sample = (time.perf_counter() - t0) / samples_seen

    result = TrainResult(model=model, best_state=best_state, runlog=runlog, best_val_ba=best_ba)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {
            "model_config": model.cfg.to_dict(),
            "train_config": asdict(config),
            "build_seed": config.seed,
            "steps": step,
            "best_val_ba": best_ba,
        }
        ckpt = out_dir / "checkpoint.ckpt"
        save_checkpoint(ckpt, result.best_state, meta)
        runlog.save_jsonl(out_dir / "runlog.jsonl")
        result.checkpoint_path = ckpt
    return result


@torch.no_grad()
def predict(
    model: SceneClassifier, data: SplitArrays, batch_size: int = 64
) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Predictions, final-predictor probabilities, and per-branch probabilities."""
    model.eval()
    probs_chunks: list[np.ndarray] = []
    branch_probs: dict[str, list[np.ndarray]] = {}
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        c, s, g, _ = data.batch(idx)
        out = _forward(model, c, s, g)
        probs_chunks.append(out.probs.numpy())
        if out.head_outputs is not None:
            for key, p in (("p_c", out.head_outputs.p_c), ("p_s", out.head_outputs.p_s), ("p_g", out.head_outputs.p_g)):
                branch_probs.setdefault(key, []).append(p.numpy())
    probs = np.concatenate(probs_chunks)
    preds = infer(probs)
    return preds, probs, {k: np.concatenate(v) for k, v in branch_probs.items()}


def evaluate_model(
    model: SceneClassifier,
    data: SplitArrays,
    num_classes: int,
    bucket_assignment: dict[int, str] | None = None,
) -> tuple[MetricReport, dict]:
    """Metric report plus extras (preds, labels, predictor-identity agreement)."""
    preds, probs, branch_probs = predict(model, data)
    labels = data.labels.numpy()
    report = compute_report(preds, labels, num_classes, bucket_assignment)
    extras = {"preds": preds, "labels": labels, "probs": probs}
    if "p_g" in branch_probs:
        extras["predictor_agreement"] = float(np.mean(preds == infer(branch_probs["p_g"])))
        extras.update(branch_probs)
    return report, extras


def evaluate(
    checkpoint: str | Path,
    manifest: DatasetManifest,
    split: str = "test",
    bucket_assignment: dict[int, str] | None = None,
) -> tuple[MetricReport, dict]:
    model, meta = load_model_from_checkpoint(checkpoint)
    if meta["model_config"]["num_classes"] != manifest.taxonomy.num_classes:
        raise ValueError("checkpoint class count does not match manifest taxonomy")
    data = load_split(manifest, split, meta["train_config"]["input_resize"])
    return evaluate_model(model, data, manifest.taxonomy.num_classes, bucket_assignment)


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradCheckEntry:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.rel_error >= self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failures


def _rel_error(a: float, n: float, floor: float = 1e-3) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def compare_grads(
    analytic: dict[str, np.ndarray],
    numeric: dict[str, list[tuple[int, float]]],
    tolerance: float,
) -> GradCheckReport:
    entries = []
    for name, coords in numeric.items():
        flat = analytic[name].reshape(-1)
        for idx, num in coords:
            entries.append(
                GradCheckEntry(name, idx, float(flat[idx]), num, _rel_error(float(flat[idx]), num))
            )
    return GradCheckReport(entries=entries, tolerance=tolerance)


def gradient_check(
    model: SceneClassifier,
    batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Central-difference check of loss_all gradients for every trainable parameter.

    Runs in double precision. When ``max_coords`` is set, a seeded subsample
    of at least that many coordinates is checked instead of every coordinate.
    """
    model = model.double()
    c, s, g, labels = batch
    c, s, g = c.double(), s.double(), g.double()

    def loss_value() -> torch.Tensor:
        return model.loss_terms(_forward(model, c, s, g), labels)["loss_all"]

    params = trainable_parameters(model)
    model.zero_grad()
    loss_value().backward()
    analytic = {k: p.grad.detach().numpy().copy() for k, p in params.items()}

    rng = np.random.default_rng(seed)
    numeric: dict[str, list[tuple[int, float]]] = {}
    total = sum(p.numel() for p in params.values())
    budget = min(max_coords, total) if max_coords is not None else total
    with torch.no_grad():
        for name in sorted(params):
            p = params[name]
            n = p.numel()
            share = n if max_coords is None else max(1, round(budget * n / total))
            coords = np.arange(n) if max_coords is None else rng.choice(n, size=min(share, n), replace=False)
            flat = p.view(-1)
            vals = []
            for idx in coords:
                idx = int(idx)
                orig = flat[idx].item()
                flat[idx] = orig + step
                up = loss_value().item()
                flat[idx] = orig - step
                down = loss_value().item()
                flat[idx] = orig
                vals.append((idx, (up - down) / (2 * step)))
            numeric[name] = vals
    return compare_grads(analytic, numeric, tolerance)


# ---------------------------------------------------------------------------
# Diagnostics


@torch.no_grad()
def branch_scores(
    model: SceneClassifier, sample: tuple[torch.Tensor, torch.Tensor, torch.Tensor], label: int
) -> tuple[float, float, float]:
    """Ground-truth-class probability from each of the three heads."""
    if not model.is_mls:
        raise ValueError("branch scores require the multi-level supervised model")
    c, s, g = (t.unsqueeze(0) if t.ndim == 3 else t for t in sample)
    out = model(c, s, g)
    ho = out.head_outputs
    if not 0 <= label < ho.p_g.shape[-1]:
        raise ValueError("label out of range")
    return float(ho.p_c[0, label]), float(ho.p_s[0, label]), float(ho.p_g[0, label])


@torch.no_grad()
def export_features(
    model: SceneClassifier, data: SplitArrays, path: str | Path, batch_size: int = 64
) -> int:
    """Write one tab-separated row per sample: id, label, then the center
    pooled feature (d), f_s_fused (2d), and f_g_fused (3d) as float32 columns.
    Deterministic formatting, so re-export is byte-identical."""
    if not model.is_cat:
        raise ValueError("feature export requires the context-fusion model")
    model.eval()
    rows = 0
    with Path(path).open("w") as fh:
        for start in range(0, len(data), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data)))
            c, s, g, labels = data.batch(idx)
            out = model(c, s, g)
            center = out.branch_feats["center"].pooled.numpy().astype(np.float32)
            fs = out.fused.f_s_fused.numpy().astype(np.float32)
            fg = out.fused.f_g_fused.numpy().astype(np.float32)
            for j, i in enumerate(idx):
                cols = [data.ids[i], str(int(labels[j]))]
                cols += ["%.8e" % v for v in center[j]]
                cols += ["%.8e" % v for v in fs[j]]
                cols += ["%.8e" % v for v in fg[j]]
                fh.write("\t".join(cols) + "\n")
                rows += 1
    return rows


@torch.no_grad()
def export_attention(
    model: SceneClassifier, sample: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
) -> dict[str, np.ndarray]:
    """Softmax attention weights of the two fusion levels, shape (heads, Nq, N)."""
    if not model.is_cat:
        raise ValueError("attention export requires the context-fusion model")
    c, s, g = (t.unsqueeze(0) if t.ndim == 3 else t for t in sample)
    out = model(c, s, g)
    return {
        "surrounding": out.fused.attn_s[0].numpy(),
        "global": out.fused.attn_g[0].numpy(),
    }


def economy_ratio(model: SceneClassifier) -> tuple[float, float]:
    """(total / single-backbone params, trainable fraction)."""
    total, trainable = parameter_count(model)
    single = single_backbone_parameter_count(model.cfg.encoder)
    return total / single, trainable / total


def backbone_bytes(model: SceneClassifier) -> bytes:
    """Concatenated raw bytes of every frozen backbone parameter."""
    groups = parameter_groups(model)
    return b"".join(
        groups["backbone"][name].detach().numpy().tobytes() for name in sorted(groups["backbone"])
    )
