"""Two-stage training orchestration, schedules, and checkpoints.

Every batch runs the stop-gradient protocol: stage 1 builds the graph on
detached embeddings, synthesizes negatives, and updates only the graph
network on the generator objective (then the real-sample head on its own
loss); stage 2 rebuilds the graph with gradients flowing, synthesizes with
detached interpolation vectors, and updates the backbone, graph network,
node head, and proxies on the composite metric objective. Backbone
parameters are untouched by stage 1 by construction, and the interpolation
head receives no gradient in stage 2.

Schedules: the interpolation interval factor eta is recomputed from the
previous epoch's mean metric loss (bootstrapped from the running mean
during the first epoch); the synthetic-term weight uses an EMA of the
generator loss, refreshed every step. The graph network's learning rate
follows cosine decay over epochs.

Checkpoints are directories with a JSON manifest and one binary blob per
parameter group; loading is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import cacai, datakit, evalkit, gcl, losses
from .backbone import Backbone, BackboneConfig, EmbeddingBatch
from .errors import CheckpointError, ConfigurationError, NumericError

ABLATION_ARMS = (
    "full",
    "single_coeff",
    "no_global",
    "no_hadamard",
    "no_rw",
    "baseline",
    "baseline_gnn",
)
_SYNTH_ARMS = {"full", "single_coeff", "no_global", "no_hadamard", "no_rw"}
CHECKPOINT_MAGIC = b"HNGP"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_classes: int = 4
    batch_instances: int = 3
    lr_f: float = 1.5e-4
    lr_g: float = 3e-4
    lr_cz: float = 1e-3
    lr_cv: float = 3e-4
    weight_decay: float = 1e-4
    alpha_pull: float = 5.0
    beta: float = 2.0
    gamma_s: float = 1.0
    gamma_d: float | None = None  # resolved per metric loss when unset
    k_steps: int = 1
    heads: int = 2
    ffn_expansion: int = 4
    share_weights_across_steps: bool = True
    metric_loss: str = "np_modified"
    ablation: str = "full"
    seed: int = 0
    pa_alpha: float = 32.0
    pa_margin: float = 0.1
    gen_ema_decay: float = 0.9
    cosine_decay_g: bool = True
    shuffle_fusion_order: bool = False
    renormalize_synthetics: bool = False
    early_stop_patience: int | None = None

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_classes < 2:
            raise ConfigurationError("batch_classes must be >= 2")
        if self.batch_instances < 2:
            raise ConfigurationError("batch_instances must be >= 2")
        for name in ("lr_f", "lr_g", "lr_cz", "lr_cv"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.metric_loss not in ("np_modified", "proxy_anchor"):
            raise ConfigurationError(f"unknown metric_loss {self.metric_loss!r}")
        if self.ablation not in ABLATION_ARMS:
            raise ConfigurationError(
                f"unknown ablation {self.ablation!r}; valid arms: {', '.join(ABLATION_ARMS)}"
            )
        if not 0.0 <= self.gen_ema_decay < 1.0:
            raise ConfigurationError("gen_ema_decay must lie in [0, 1)")

    def resolved_gamma_d(self) -> float:
        if self.gamma_d is not None:
            return self.gamma_d
        return 0.01 if self.metric_loss == "proxy_anchor" else 0.03

    @property
    def uses_synthetics(self) -> bool:
        return self.ablation in _SYNTH_ARMS

    @property
    def uses_graph(self) -> bool:
        return self.ablation in _SYNTH_ARMS or self.ablation == "baseline_gnn"


@dataclass
class RunState:
    epoch: int = 0
    step: int = 0
    eta: float = 1.0
    avg_metric_loss: float | None = None  # last finished epoch
    epoch_loss_sum: float = 0.0
    epoch_loss_count: int = 0
    gen_ema: float | None = None
    gamma_n: float | None = None


def eta_for_batch(cfg: TrainConfig, state: RunState) -> float:
    """Interval factor for the coming batch; frozen while the batch runs.

    After the first epoch this is a per-epoch constant from the previous
    epoch's mean metric loss; during the first epoch it bootstraps from the
    running mean of the metric losses seen so far (widest interval before
    any signal exists).
    """
    if state.avg_metric_loss is not None:
        j_avg = state.avg_metric_loss
    elif state.epoch_loss_count > 0:
        j_avg = state.epoch_loss_sum / state.epoch_loss_count
    else:
        j_avg = None
    return cacai.eta_from_avg_loss(cfg.alpha_pull, j_avg)


def record_metric_loss(state: RunState, value: float) -> None:
    state.epoch_loss_sum += float(value)
    state.epoch_loss_count += 1


def finish_epoch_schedules(cfg: TrainConfig, state: RunState) -> None:
    """Epoch boundary: fold the epoch's mean metric loss into the eta driver."""
    if state.epoch_loss_count > 0:
        state.avg_metric_loss = state.epoch_loss_sum / state.epoch_loss_count
    state.epoch_loss_sum = 0.0
    state.epoch_loss_count = 0
    state.eta = cacai.eta_from_avg_loss(cfg.alpha_pull, state.avg_metric_loss)


def update_gen_tracker(cfg: TrainConfig, state: RunState, gen_loss: float) -> float:
    """EMA the generator loss (detached) and refresh gamma_n from it."""
    if state.gen_ema is None:
        state.gen_ema = float(gen_loss)
    else:
        d = cfg.gen_ema_decay
        state.gen_ema = d * state.gen_ema + (1.0 - d) * float(gen_loss)
    state.gamma_n = losses.gamma_n_from_gen(cfg.beta, state.gen_ema)
    return state.gamma_n


def cosine_lr(base: float, epoch: int, total_epochs: int) -> float:
    if total_epochs <= 1:
        return base
    frac = min(max(epoch / (total_epochs - 1), 0.0), 1.0)
    return base * 0.5 * (1.0 + np.cos(np.pi * frac))


class HngModel(ad.Module):
    """All trainable components for one ablation arm."""

    def __init__(
        self,
        cfg: TrainConfig,
        backbone_cfg: BackboneConfig,
        input_dim: int,
        codec: losses.ClassCodec,
        rng: np.random.Generator,
    ):
        cfg.validate()
        self.cfg = cfg
        self.codec = codec
        self.backbone = Backbone(backbone_cfg, input_dim, rng)
        dim = backbone_cfg.embed_dim
        self.graph: gcl.GraphNet | None = None
        self.lambda_head: cacai.LambdaHead | None = None
        self.head_cz: losses.ClassifierHead | None = None
        self.head_cv: losses.ClassifierHead | None = None
        self.proxies: losses.ProxyBank | None = None
        if cfg.uses_graph:
            self.graph = gcl.GraphNet(
                dim,
                gcl.GraphNetConfig(
                    k_steps=cfg.k_steps,
                    heads=cfg.heads,
                    ffn_expansion=cfg.ffn_expansion,
                    share_weights_across_steps=cfg.share_weights_across_steps,
                ),
                rng,
            )
            self.head_cv = losses.ClassifierHead("C_v", codec.num_classes, dim, rng)
        if cfg.uses_synthetics:
            self.head_cz = losses.ClassifierHead("C_z", codec.num_classes, dim, rng)
            if cfg.ablation != "single_coeff":
                self.lambda_head = cacai.LambdaHead(dim, rng)
        if cfg.metric_loss == "proxy_anchor":
            self.proxies = losses.ProxyBank(
                codec.num_classes, dim, rng, alpha=cfg.pa_alpha, margin=cfg.pa_margin
            )

    def parameter_groups(self) -> dict[str, dict[str, ad.Tensor]]:
        groups: dict[str, dict[str, ad.Tensor]] = {
            "backbone": self.backbone.named_parameters()
        }
        if self.graph is not None:
            groups["gcl"] = self.graph.named_parameters()
        if self.lambda_head is not None:
            groups["cacai_fc"] = self.lambda_head.named_parameters()
        heads: dict[str, ad.Tensor] = {}
        if self.head_cz is not None:
            heads.update({f"cz.{k}": v for k, v in self.head_cz.named_parameters().items()})
        if self.head_cv is not None:
            heads.update({f"cv.{k}": v for k, v in self.head_cv.named_parameters().items()})
        if heads:
            groups["heads"] = heads
        if self.proxies is not None:
            groups["proxies"] = self.proxies.named_parameters()
        return groups

    def generator_params(self) -> list[ad.Tensor]:
        params: list[ad.Tensor] = []
        if self.graph is not None:
            params.extend(self.graph.parameters())
        if self.lambda_head is not None:
            params.extend(self.lambda_head.parameters())
        return params

    def propagate_graph(self, zb: EmbeddingBatch) -> gcl.CorrelationGraph:
        assert self.graph is not None
        return self.graph.propagate(
            gcl.init_graph(zb),
            node_propagation=self.cfg.ablation != "no_global",
            include_edge_sum=self.cfg.ablation != "no_hadamard",
        )

    def lambda_for(self, graph: gcl.CorrelationGraph) -> ad.Tensor:
        """Interpolation vectors from final edges; the single-coefficient
        arm replaces them with the constant 1."""
        b, d = graph.size, graph.dim
        if self.cfg.ablation == "single_coeff":
            return ad.Tensor(np.ones((b, b, d)))
        assert self.lambda_head is not None
        return self.lambda_head(graph.e)

    def metric_loss_term(self, zb: EmbeddingBatch) -> ad.Tensor:
        if self.cfg.metric_loss == "proxy_anchor":
            assert self.proxies is not None
            return losses.pa_loss(zb.z, zb.labels, self.proxies, self.codec)
        return losses.np_loss(zb.z, zb.labels, zb.n_classes, zb.n_instances)


@dataclass
class FitResult:
    run_dir: Path
    history: list[dict] = field(default_factory=list)
    checkpoint_dirs: list[Path] = field(default_factory=list)
    log_path: Path | None = None

    @property
    def final_checkpoint(self) -> Path:
        return self.checkpoint_dirs[-1]


class Trainer:
    def __init__(
        self,
        train_set: datakit.Dataset,
        val_set: datakit.Dataset | None,
        cfg: TrainConfig,
        backbone_cfg: BackboneConfig,
        run_dir: Path,
        eval_ks: list[int] | None = None,
        resolved_config: dict | None = None,
    ):
        cfg.validate()
        backbone_cfg.validate()
        if len(train_set) < cfg.batch_classes * cfg.batch_instances:
            raise ConfigurationError("dataset smaller than one batch")
        self.cfg = cfg
        self.backbone_cfg = backbone_cfg
        self.train_set = train_set
        self.val_set = val_set
        self.run_dir = Path(run_dir)
        self.eval_ks = eval_ks or [1, 2, 4, 8]
        self.resolved_config = resolved_config or {}
        self.codec = losses.ClassCodec(train_set.labels)

        root = np.random.default_rng(cfg.seed)
        seeds = root.integers(0, 2**63 - 1, size=4)
        self.init_rng = np.random.default_rng(seeds[0])
        self.sampler_rng = np.random.default_rng(seeds[1])
        self.synth_rng = np.random.default_rng(seeds[2])
        self.positive_rng = np.random.default_rng(seeds[3])

        self.model = HngModel(cfg, backbone_cfg, train_set.dim, self.codec, self.init_rng)
        self.state = RunState()
        wd = cfg.weight_decay
        self.opt_f = ad.AdamW(self.model.backbone.parameters(), cfg.lr_f, wd)
        self.opt_g = ad.AdamW(self.model.generator_params(), cfg.lr_g, wd)
        self.opt_cz = (
            ad.AdamW(self.model.head_cz.parameters(), cfg.lr_cz, wd)
            if self.model.head_cz is not None
            else None
        )
        self.opt_cv = (
            ad.AdamW(self.model.head_cv.parameters(), cfg.lr_cv, wd)
            if self.model.head_cv is not None
            else None
        )
        # proxies ride the stage-2 update at the backbone rate
        self.opt_prox = (
            ad.AdamW(self.model.proxies.parameters(), cfg.lr_f, wd)
            if self.model.proxies is not None
            else None
        )

    # -- stages ---------------------------------------------------------------

    def _zero_all(self) -> None:
        self.model.zero_grad()

    def _stage1(self, zb_sg: EmbeddingBatch, positive_idx: np.ndarray, eta: float) -> dict:
        """Generator and real-head updates on detached embeddings."""
        cfg, model = self.cfg, self.model
        ctx = _FixedEtaContext(cfg.alpha_pull, eta)
        graph = model.propagate_graph(zb_sg)
        lam = model.lambda_for(graph)
        synth = cacai.synthesize(
            zb_sg, lam, ctx, self.synth_rng, positive_idx,
            shuffle_fusion_order=cfg.shuffle_fusion_order,
            pick_single=cfg.ablation == "no_rw",
            renormalize=cfg.renormalize_synthetics,
        )
        weights = losses.Stage1Weights(cfg.gamma_s, cfg.resolved_gamma_d())
        gen_loss, parts = losses.j_gen(
            zb_sg.z, synth, lam, model.head_cz, self.codec, weights
        )
        if gen_loss.requires_grad:
            gen_loss.backward()
            self.opt_g.step()
        self._zero_all()

        cz_loss = losses.j_cz(zb_sg.z, zb_sg.labels, model.head_cz, self.codec)
        cz_loss.backward()
        self.opt_cz.step()
        self._zero_all()
        return {"j_gen": float(gen_loss.data), "j_cz": float(cz_loss.data), **parts}

    def _stage2(self, zb: EmbeddingBatch, positive_idx: np.ndarray, eta: float) -> dict:
        """Joint metric update; the lambda pathway carries no gradient."""
        cfg, model = self.cfg, self.model
        out: dict = {}
        j_r = model.metric_loss_term(zb)
        total = j_r
        out["j_r"] = float(j_r.data)
        if cfg.uses_graph:
            graph = model.propagate_graph(zb)
            gca = losses.j_gca(graph.v, zb.labels, model.head_cv, self.codec)
            total = total + gca
            out["j_gca"] = float(gca.data)
            if cfg.uses_synthetics:
                lam_sg = model.lambda_for(graph).detach()
                ctx = _FixedEtaContext(cfg.alpha_pull, eta)
                synth = cacai.synthesize(
                    zb, lam_sg, ctx, self.synth_rng, positive_idx,
                    shuffle_fusion_order=cfg.shuffle_fusion_order,
                    pick_single=cfg.ablation == "no_rw",
                    renormalize=cfg.renormalize_synthetics,
                )
                syn = losses.j_syn(zb.z, positive_idx, synth)
                gamma_n = self.state.gamma_n if self.state.gamma_n is not None else 0.0
                total = total + (1.0 - gamma_n) * syn
                out["j_syn"] = float(syn.data)
        total.backward()
        self.opt_f.step()
        if cfg.uses_graph:
            self.opt_g.step()
            self.opt_cv.step()
        if self.opt_prox is not None:
            self.opt_prox.step()
        self._zero_all()
        out["j_m"] = float(total.data)
        return out

    # -- steps and epochs -------------------------------------------------------

    def train_step(self, batch: datakit.LabeledBatch) -> losses.LossReport:
        cfg = self.cfg
        eta = eta_for_batch(cfg, self.state)
        self.state.eta = eta
        report = losses.LossReport(step=self.state.step, epoch=self.state.epoch, eta=eta)
        report.lr_g = self.opt_g.lr if self.model.graph is not None else None

        zb = self.model.backbone.embed(batch, mode="train")
        positive_idx = cacai.select_positives(zb.labels, self.positive_rng)

        if cfg.uses_synthetics:
            zb_sg = EmbeddingBatch(
                zb.z.detach(), zb.labels, zb.n_classes, zb.n_instances
            )
            s1 = self._stage1(zb_sg, positive_idx, eta)
            report.j_gen = s1["j_gen"]
            report.j_cz = s1["j_cz"]
            report.j_ce = s1["j_ce"]
            report.j_sim = s1["j_sim"]
            report.j_div = s1["j_div"]
            report.gamma_n = update_gen_tracker(cfg, self.state, s1["j_gen"])

        s2 = self._stage2(zb, positive_idx, eta)
        report.j_r = s2.get("j_r")
        report.j_gca = s2.get("j_gca")
        report.j_syn = s2.get("j_syn")
        report.j_m = s2.get("j_m")

        try:
            report.assert_finite()
        except ValueError as exc:
            self._dump_diagnostics(report, str(exc))
            raise NumericError(f"aborting step {self.state.step}: {exc}") from exc

        record_metric_loss(self.state, s2["j_r"])
        self.state.step += 1
        return report

    def _dump_diagnostics(self, report: losses.LossReport, reason: str) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        norms = {
            f"{g}.{name}": float(np.linalg.norm(p.data))
            for g, params in self.model.parameter_groups().items()
            for name, p in params.items()
        }
        payload = {
            "reason": reason,
            "report": report.to_dict(),
            "param_norms": norms,
        }
        (self.run_dir / "numeric_abort.json").write_text(json.dumps(payload, indent=2))

    def _evaluate_checkpoint(self, ckpt_dir: Path) -> evalkit.MetricReport:
        """Validation retrieval on the just-saved snapshot, never live params."""
        model = HngModel(
            self.cfg, self.backbone_cfg, self.train_set.dim, self.codec,
            np.random.default_rng(0),
        )
        load_checkpoint(ckpt_dir, model)
        z = model.backbone.embed_array(self.val_set.features)
        index = evalkit.RetrievalIndex.single_set(z, self.val_set.labels)
        ks = [k for k in self.eval_ks if k <= index.effective_gallery_size]
        return evalkit.evaluate_retrieval(index, ks)

    def fit(self, on_epoch=None) -> FitResult:
        cfg = self.cfg
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "resolved_config.json").write_text(
            json.dumps(self.resolved_config, indent=2, sort_keys=True)
        )
        log_path = self.run_dir / "train_log.jsonl"
        result = FitResult(run_dir=self.run_dir, log_path=log_path)
        ckpt_root = self.run_dir / "checkpoints"
        steps_per_epoch = len(self.train_set) // (cfg.batch_classes * cfg.batch_instances)

        initial = ckpt_root / "epoch_000"
        save_checkpoint(initial, self.model, self._manifest(epoch=0, history=[]))
        result.checkpoint_dirs.append(initial)

        best_r1 = -1.0
        stale = 0
        with open(log_path, "w", encoding="utf-8") as log:
            for epoch in range(cfg.epochs):
                self.state.epoch = epoch
                if cfg.cosine_decay_g:
                    self.opt_g.lr = cosine_lr(cfg.lr_g, epoch, cfg.epochs)
                for _ in range(steps_per_epoch):
                    batch = datakit.sample_balanced(
                        self.train_set, cfg.batch_classes, cfg.batch_instances,
                        self.sampler_rng,
                    )
                    report = self.train_step(batch)
                    report.timestamp = _timestamp()
                    log.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
                finish_epoch_schedules(cfg, self.state)

                ckpt = ckpt_root / f"epoch_{epoch + 1:03d}"
                save_checkpoint(ckpt, self.model, self._manifest(epoch + 1, result.history))
                result.checkpoint_dirs.append(ckpt)
                if self.val_set is not None:
                    metrics = self._evaluate_checkpoint(ckpt)
                    entry = {"epoch": epoch + 1, **metrics.to_dict()}
                    result.history.append(entry)
                    if on_epoch is not None:
                        on_epoch(entry)
                    r1 = metrics.recall_at.get(1, 0.0)
                    if r1 > best_r1 + 1e-12:
                        best_r1, stale = r1, 0
                    else:
                        stale += 1
                    if (
                        cfg.early_stop_patience is not None
                        and stale >= cfg.early_stop_patience
                    ):
                        break
        (self.run_dir / "history.json").write_text(json.dumps(result.history, indent=2))
        return result

    def _manifest(self, epoch: int, history: list[dict]) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "config_hash": config_hash(self.resolved_config),
            "resolved_config": self.resolved_config,
            "ablation": self.cfg.ablation,
            "metric_loss": self.cfg.metric_loss,
            "epoch": epoch,
            "metric_history": list(history),
            "class_ids": self.codec.ids.tolist(),
            "dtype": "float64",
        }


class _FixedEtaContext:
    """InterpolationContext stand-in with a precomputed eta (frozen per batch)."""

    def __init__(self, alpha_pull: float, eta: float):
        self.alpha_pull = alpha_pull
        self.eta = eta


def _timestamp() -> str:
    t = time.time()
    base = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(t))
    return f"{base}.{int((t % 1) * 1e6):06d}Z"


def config_hash(resolved_config: dict) -> str:
    blob = json.dumps(resolved_config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- checkpoint serialization ---------------------------------------------------

_DTYPE_CODES = {np.dtype("<f8"): 8, np.dtype("<f4"): 4}
_CODE_DTYPES = {8: np.dtype("<f8"), 4: np.dtype("<f4")}


def _write_group(path: Path, params: dict[str, ad.Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        names = sorted(params)
        sample_dtype = params[names[0]].data.dtype if names else np.dtype("<f8")
        code = _DTYPE_CODES[np.dtype(sample_dtype.str.replace(">", "<"))]
        fh.write(struct.pack("<III", CHECKPOINT_VERSION, code, len(names)))
        for name in names:
            data = np.ascontiguousarray(params[name].data, dtype=_CODE_DTYPES[code])
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def _read_group(path: Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad parameter blob magic")
        version, code, count = struct.unpack("<III", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {version} needs migration "
                f"(supported: {CHECKPOINT_VERSION})"
            )
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            n_items = int(np.prod(shape)) if shape else 1
            buf = fh.read(n_items * dtype.itemsize)
            out[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return out


def save_checkpoint(ckpt_dir: Path, model: HngModel, manifest: dict) -> None:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    groups = model.parameter_groups()
    manifest = dict(manifest)
    manifest["groups"] = {
        g: {name: list(p.data.shape) for name, p in params.items()}
        for g, params in groups.items()
    }
    (ckpt_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for g, params in groups.items():
        _write_group(ckpt_dir / f"{g}.bin", params)


def load_manifest(ckpt_dir: Path) -> dict:
    path = Path(ckpt_dir) / "manifest.json"
    if not path.exists():
        raise CheckpointError(f"{ckpt_dir}: no manifest.json")
    manifest = json.loads(path.read_text())
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{ckpt_dir}: manifest version {version} needs migration "
            f"(supported: {CHECKPOINT_VERSION})"
        )
    return manifest


def load_checkpoint(ckpt_dir: Path, model: HngModel) -> dict:
    """Restore parameters in place; shapes and groups must match exactly."""
    ckpt_dir = Path(ckpt_dir)
    manifest = load_manifest(ckpt_dir)
    groups = model.parameter_groups()
    saved_groups = manifest.get("groups", {})
    if sorted(saved_groups) != sorted(groups):
        raise CheckpointError(
            f"parameter groups differ: checkpoint has {sorted(saved_groups)}, "
            f"model needs {sorted(groups)} (different ablation arm?)"
        )
    for g, params in groups.items():
        stored = _read_group(ckpt_dir / f"{g}.bin")
        if sorted(stored) != sorted(params):
            raise CheckpointError(f"group {g!r}: parameter names differ")
        for name, p in params.items():
            if stored[name].shape != p.data.shape:
                raise CheckpointError(
                    f"group {g!r} tensor {name!r}: shape "
                    f"{stored[name].shape} != {p.data.shape}"
                )
            p.data = stored[name].astype(np.float64)
    return manifest
