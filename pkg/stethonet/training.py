"""
Training stages: contrastive pretraining, prototypical fine-tuning and the
linear-probe baseline (from a pretrained checkpoint or from scratch).
"""

import copy
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.metrics import f1_score

from stethonet.config import RunConfig
from stethonet.encoders.factory import create_network
from stethonet.metrics import select_threshold
from stethonet.models import (
    ModelBundle,
    backbone_features,
    clean_specs,
    create_head,
    fuse_features,
    score_windows,
)
from stethonet.objectives import pretrain_objective
from stethonet.protohead import PrototypeSet, compute_prototypes, episodic_loss
from stethonet.store import WindowSet
from stethonet.substrate import Adam, clip_global_norm, cosine_lr, global_grad_norm, plateau_lr, set_seed
from stethonet.views import augment_wave, make_views
from stethonet.windows import SplitError, make_episode, oversample_minority, sample_balanced_batch

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    bundle: ModelBundle
    optimizer: torch.optim.Optimizer
    named_params: Dict[str, torch.nn.Parameter]
    history: Dict[str, List[float]] = field(default_factory=dict)


def _require_training_split(windows: WindowSet, labeled: bool = True) -> None:
    if windows.split == "test":
        raise SplitError("training on the test split is not allowed")
    if len(windows) < 2:
        raise ValueError(f"need at least 2 training windows, got {len(windows)}")
    if labeled and len(np.unique(windows.labels)) < 2:
        raise SplitError("training split holds a single class")


def _minibatches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffled batches; a trailing batch of one sample is dropped (batch norm needs two)."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return [b for b in batches if len(b) > 1]


def _named(**modules) -> Dict[str, torch.nn.Parameter]:
    named = {}
    for prefix, module in modules.items():
        if module is None:
            continue
        for name, p in module.named_parameters():
            named[f"{prefix}.{name}"] = p
    return named


def _val_f1(bundle: ModelBundle, val: Optional[WindowSet]) -> Optional[float]:
    if val is None or len(val) == 0 or len(np.unique(val.labels)) < 2:
        return None
    labels, _ = score_windows(bundle, val)
    return float(f1_score(val.labels, labels, zero_division=0))


def _frozen_threshold(bundle: ModelBundle, val: Optional[WindowSet]) -> float:
    """Validation max-F1 threshold, or 0.5 without a usable validation split."""
    if val is None or len(val) == 0 or len(np.unique(val.labels)) < 2:
        return 0.5
    _, scores = score_windows(bundle, val)
    return select_threshold(scores, val.labels)


def adopt_architecture(config: RunConfig, pretrained: ModelBundle) -> RunConfig:
    """Stage config with the encoder wiring the pretrained tensors were built with."""
    source = pretrained.config
    if config.encoder == source.encoder and config.ablation == source.ablation:
        return config
    logger.warning(
        f"Run config ({config.preset}) differs from the checkpoint architecture ({source.preset}); "
        f"using the checkpoint's encoder and ablation settings"
    )
    return replace(
        config,
        preset=source.preset,
        encoder=copy.deepcopy(source.encoder),
        ablation=copy.deepcopy(source.ablation),
    )


# =============================================================================
# Contrastive pretraining
# =============================================================================


def pretrain(config: RunConfig, train: WindowSet) -> TrainResult:
    """
    Optimize the dual-path contrastive objective on unlabeled training windows.

    Each window yields two 1D views and two 2D views per step; the learning
    rate follows a cosine schedule over all steps.

    Raises:
        ValueError: fewer than two training windows
    """
    _require_training_split(train, labeled=False)
    set_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    cfg = config.pretrain
    loss_cfg = config.effective_loss()

    network = create_network(config.encoder, config.ablation, train.samples.shape[1])
    network.train()
    named = _named(tcn=network.tcn, enc2d=network.enc2d, fusion=network.fusion)
    optimizer = Adam(network.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    steps_per_epoch = len(_minibatches(len(train), cfg.batch_size, np.random.default_rng(0)))
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    if cfg.schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda t: cosine_lr(min(t, total_steps), total_steps, 1.0))
    else:
        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda t: 1.0)

    history: Dict[str, List[float]] = {"loss": [], "ntxent": [], "wasserstein": [], "batch_loss": []}
    logger.info(f"Pretraining on {len(train)} windows: {cfg.epochs} epochs x {steps_per_epoch} steps ({config.preset})")

    for epoch in range(cfg.epochs):
        epoch_losses, epoch_n, epoch_w = [], [], []
        for batch in _minibatches(len(train), cfg.batch_size, rng):
            views = [
                make_views(train.samples[i], rng, cfg.n_time_masks, cfg.n_freq_masks, cfg.max_mask_width)
                for i in batch
            ]
            wave_a = torch.tensor(np.stack([v.wave_a for v in views]), dtype=torch.float32)
            wave_b = torch.tensor(np.stack([v.wave_b for v in views]), dtype=torch.float32)
            z1a, z2a = network.encode_views(wave_a, _stack_specs(views, "spec_a") if network.dual_path else None)
            z1b, z2b = network.encode_views(wave_b, _stack_specs(views, "spec_b") if network.dual_path else None)

            breakdown = pretrain_objective(z1a, z1b, z2a, z2b, loss_cfg)
            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()
            scheduler.step()

            epoch_losses.append(float(breakdown.total))
            epoch_n.append(breakdown.ntxent)
            epoch_w.append(breakdown.wasserstein)
            history["batch_loss"].append(float(breakdown.total))
            logger.debug(f"pretrain epoch {epoch + 1} batch loss {float(breakdown.total):.5f}")

        history["loss"].append(float(np.mean(epoch_losses)))
        history["ntxent"].append(float(np.mean(epoch_n)))
        history["wasserstein"].append(float(np.mean(epoch_w)))
        logger.info(f"Pretrain epoch {epoch + 1}/{cfg.epochs}: loss {history['loss'][-1]:.4f}")

    bundle = ModelBundle(
        config=config,
        network=network.eval(),
        stage="pretrain",
        metadata={
            "loss_trajectory": history["loss"],
            "batch_losses": history["batch_loss"],
            "optimizer_steps": total_steps,
            "skipped_steps": optimizer.skipped_steps,
        },
    )
    return TrainResult(bundle=bundle, optimizer=optimizer, named_params=named, history=history)


def _stack_specs(views, attr: str) -> torch.Tensor:
    return torch.tensor(np.stack([getattr(v, attr) for v in views]), dtype=torch.float32)


# =============================================================================
# Prototypical fine-tuning
# =============================================================================


def train_proto(
    config: RunConfig,
    pretrained: ModelBundle,
    train: WindowSet,
    val: Optional[WindowSet] = None,
) -> TrainResult:
    """
    Train the fusion layer and prototypical head on class-balanced episodes
    over a frozen backbone, then cache full-training-set prototypes.
    Encoder and ablation settings follow the pretrained bundle.

    Raises:
        SplitError: single-class or test split
    """
    _require_training_split(train)
    config = adopt_architecture(config, pretrained)
    set_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    cfg = config.proto

    network = pretrained.network
    network.freeze_backbone(True)
    head = create_head(config, "proto", network.embed_dim)
    named = _named(fusion=network.fusion, head=head)
    params = list(named.values())
    optimizer = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    # Frozen, eval-mode backbone: features are fixed for the whole stage
    z1, z2 = backbone_features(network, train.samples)
    labels = train.labels
    episodes = cfg.episodes_per_epoch or max(1, len(train) // (2 * cfg.per_class))

    bundle = ModelBundle(config=config, network=network, stage="proto", head=head)
    history: Dict[str, List[float]] = {"loss": [], "val_f1": [], "grad_norm": []}
    logger.info(f"Prototypical training on {len(train)} windows: {cfg.epochs} epochs x {episodes} episodes")

    for epoch in range(cfg.epochs):
        network.train()
        head.train()
        losses = []
        for _ in range(episodes):
            batch = sample_balanced_batch(labels, cfg.per_class, rng)
            episode = make_episode([(i, int(labels[i])) for i in batch], cfg.k_shot, seed=int(rng.integers(2**31 - 1)))
            s_idx = [i for i, _ in episode.support]
            q_idx = [i for i, _ in episode.query]
            rows = s_idx + q_idx
            metric = head(fuse_features(network, z1[rows], z2[rows] if z2 is not None else None))
            loss = episodic_loss(
                metric[:len(s_idx)], [y for _, y in episode.support],
                metric[len(s_idx):], [y for _, y in episode.query],
            )
            optimizer.zero_grad()
            loss.backward()
            clip_global_norm(params, cfg.clip)
            history["grad_norm"].append(global_grad_norm(params))
            optimizer.step()
            losses.append(float(loss))

        history["loss"].append(float(np.mean(losses)))
        bundle.prototypes = full_train_prototypes(bundle, z1, z2, labels)
        f1 = _val_f1(bundle, val)
        if f1 is not None:
            history["val_f1"].append(f1)
        logger.info(
            f"Proto epoch {epoch + 1}/{cfg.epochs}: loss {history['loss'][-1]:.4f}"
            + (f", val F1 {f1:.4f}" if f1 is not None else "")
        )

    bundle.prototypes = full_train_prototypes(bundle, z1, z2, labels)
    bundle.threshold = _frozen_threshold(bundle, val)
    bundle.metadata = {
        "loss_trajectory": history["loss"],
        "val_f1": history["val_f1"],
        "max_grad_norm": max(history["grad_norm"]) if history["grad_norm"] else 0.0,
        "skipped_steps": optimizer.skipped_steps,
        "pretrain": pretrained.metadata.get("loss_trajectory", []),
    }
    bundle.eval()
    return TrainResult(bundle=bundle, optimizer=optimizer, named_params=named, history=history)


@torch.no_grad()
def full_train_prototypes(bundle: ModelBundle, z1: torch.Tensor, z2: Optional[torch.Tensor], labels: np.ndarray) -> PrototypeSet:
    """Class means of every training window in the metric space, eval mode."""
    was_training = bundle.head.training
    bundle.network.eval()
    bundle.head.eval()
    metric = bundle.head(fuse_features(bundle.network, z1, z2))
    protos = compute_prototypes(metric, labels.tolist(), source="full-train-cache")
    bundle.head.train(was_training)
    return protos


# =============================================================================
# Linear baseline
# =============================================================================


def train_linear_baseline(
    config: RunConfig,
    pretrained: Optional[ModelBundle],
    train: WindowSet,
    val: Optional[WindowSet] = None,
) -> TrainResult:
    """
    Fine-tune a linear head with softmax cross-entropy.

    From a pretrained bundle the backbone stays frozen for `freeze_epochs`
    and then trains at `backbone_lr` while the head uses `head_lr`. Without
    one (the fully supervised baseline) everything trains from random init
    at `head_lr`. The minority class is oversampled with augmented copies.
    The learning rate follows the plateau rule on validation loss (training
    loss when there is no validation split).

    Raises:
        SplitError: single-class or test split
    """
    _require_training_split(train)
    set_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    cfg = config.baseline

    from_scratch = pretrained is None
    if from_scratch:
        network = create_network(config.encoder, config.ablation, train.samples.shape[1])
    else:
        config = adopt_architecture(config, pretrained)
        network = pretrained.network
    head = create_head(config, "linear", network.embed_dim)
    named = _named(tcn=network.tcn, enc2d=network.enc2d, fusion=network.fusion, head=head)

    head_params = list(head.parameters()) + list(network.head_parameters())
    backbone_params = list(network.backbone_parameters())
    if from_scratch:
        groups = [{"params": head_params + backbone_params, "lr": cfg.head_lr}]
        freeze_epochs = 0
    else:
        groups = [{"params": head_params, "lr": cfg.head_lr}, {"params": backbone_params, "lr": cfg.backbone_lr}]
        freeze_epochs = cfg.freeze_epochs
    base_lrs = [g["lr"] for g in groups]
    optimizer = Adam(groups, weight_decay=cfg.weight_decay)
    params = head_params + backbone_params

    waves, labels = _oversampled(train, config.seed)
    specs = clean_specs(waves) if network.dual_path else None
    val_waves = val.samples if val is not None and len(val) else None
    val_specs = clean_specs(val_waves) if val_waves is not None and network.dual_path else None

    bundle = ModelBundle(config=config, network=network, stage="linear", head=head)
    history: Dict[str, List[float]] = {"loss": [], "val_loss": [], "lr_multiplier": [], "val_f1": []}
    logger.info(
        f"Linear baseline on {len(labels)} windows ({'scratch' if from_scratch else 'pretrained'}, "
        f"freeze {freeze_epochs} epochs)"
    )

    for epoch in range(cfg.epochs):
        network.freeze_backbone(epoch < freeze_epochs)
        network.train()
        head.train()
        losses = []
        for batch in _minibatches(len(labels), cfg.batch_size, rng):
            logits = head(network(
                torch.from_numpy(waves[batch]),
                torch.from_numpy(specs[batch]) if specs is not None else None,
            ))
            loss = F.cross_entropy(logits, torch.from_numpy(labels[batch]))
            optimizer.zero_grad()
            loss.backward()
            clip_global_norm(params, cfg.clip)
            optimizer.step()
            losses.append(float(loss))
        history["loss"].append(float(np.mean(losses)))

        monitored = history["loss"]
        if val_waves is not None:
            history["val_loss"].append(_cross_entropy(network, head, val_waves, val_specs, val.labels))
            monitored = history["val_loss"]
        multiplier = plateau_lr(monitored, cfg.patience, cfg.factor)
        for group, base in zip(optimizer.param_groups, base_lrs):
            group["lr"] = base * multiplier
        history["lr_multiplier"].append(multiplier)

        f1 = _val_f1(bundle, val)
        if f1 is not None:
            history["val_f1"].append(f1)
        logger.info(f"Linear epoch {epoch + 1}/{cfg.epochs}: loss {history['loss'][-1]:.4f}, lr x{multiplier:g}")

    network.freeze_backbone(False)
    bundle.threshold = _frozen_threshold(bundle, val)
    bundle.metadata = {
        "loss_trajectory": history["loss"],
        "val_loss": history["val_loss"],
        "val_f1": history["val_f1"],
        "lr_multiplier": history["lr_multiplier"],
        "from_scratch": from_scratch,
        "skipped_steps": optimizer.skipped_steps,
    }
    bundle.eval()
    return TrainResult(bundle=bundle, optimizer=optimizer, named_params=named, history=history)


def _oversampled(train: WindowSet, seed: int):
    """Training waves plus augmented minority copies, float32, with labels."""
    plan = oversample_minority(train.as_windows(), seed, train_patients=set(train.patient_ids))
    row = {w: i for i, w in enumerate(train.window_ids)}
    extra = [augment_wave(train.samples[row[entry.window_id]], entry.recipe) for entry in plan]
    extra_labels = [int(train.labels[row[entry.window_id]]) for entry in plan]
    waves = np.concatenate([train.samples, np.asarray(extra).reshape(len(extra), -1)]) if extra else train.samples
    labels = np.concatenate([train.labels, np.asarray(extra_labels, dtype=np.int64)])
    return np.ascontiguousarray(waves, dtype=np.float32), labels.astype(np.int64)


@torch.no_grad()
def _cross_entropy(network, head, waves: np.ndarray, specs: Optional[np.ndarray], labels: np.ndarray) -> float:
    network.eval()
    head.eval()
    logits = []
    for start in range(0, len(waves), 64):
        rows = slice(start, start + 64)
        logits.append(head(network(
            torch.from_numpy(np.ascontiguousarray(waves[rows], dtype=np.float32)),
            torch.from_numpy(specs[rows]) if specs is not None else None,
        )))
    return float(F.cross_entropy(torch.cat(logits), torch.from_numpy(labels.astype(np.int64))))
