"""
Differentiable computation contract shared by every network module.

Tensors, layers and autograd come from torch; this module pins down the
pieces the training harness depends on: seeding, the gradient-check harness
over the primitive layers, Adam with non-finite step skipping, the
learning-rate schedules, global-norm clipping and the checkpoint file format.
"""

import json
import logging
import math
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from stethonet.config import Config

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"STNCKPT1"
CHECKPOINT_SCHEMA_VERSION = 1

_DTYPES = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.int64: "int64",
}
_NUMPY_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(ValueError):
    """Checkpoint file that does not match what the loader expects."""


def set_seed(seed: int) -> None:
    """Seed python, numpy and torch, and request deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.set_num_threads(Config.NUM_THREADS)
    torch.use_deterministic_algorithms(True, warn_only=True)


def check_shapes(name: str, expected: Sequence[Optional[int]], actual: Sequence[int]) -> None:
    """Raise ValueError naming both shapes when they disagree (None matches anything)."""
    if len(expected) != len(actual) or any(e is not None and e != a for e, a in zip(expected, actual)):
        raise ValueError(f"{name}: shape mismatch, expected {tuple(expected)} got {tuple(actual)}")


# =============================================================================
# Gradient checking
# =============================================================================


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    per_input: List[float] = field(default_factory=list)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def finite_difference_check(
    fn: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    h: float = 1e-5,
    name: str = "fn",
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare autograd gradients with central finite differences in float64.

    The output is reduced to a scalar through a fixed random projection. The
    error of each input is max|analytic - numeric| divided by the largest
    numeric gradient magnitude of that input (or 1 when it is below 1).
    """
    inputs = [x.detach().to(torch.float64).clone().requires_grad_(x.requires_grad) for x in inputs]
    generator = torch.Generator().manual_seed(seed)

    with torch.no_grad():
        probe = fn(*inputs)
    projection = torch.randn(probe.shape, generator=generator, dtype=torch.float64)

    def scalar(*args: torch.Tensor) -> torch.Tensor:
        return (fn(*args) * projection).sum()

    out = scalar(*inputs)
    targets = [x for x in inputs if x.requires_grad]
    analytic = torch.autograd.grad(out, targets, allow_unused=True)

    errors = []
    with torch.no_grad():
        for x, grad in zip(targets, analytic):
            grad = torch.zeros_like(x) if grad is None else grad
            numeric = torch.zeros_like(x)
            flat = x.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                plus = scalar(*inputs).item()
                flat[i] = original - h
                minus = scalar(*inputs).item()
                flat[i] = original
                numeric.view(-1)[i] = (plus - minus) / (2 * h)
            scale = max(numeric.abs().max().item(), 1.0)
            errors.append((grad - numeric).abs().max().item() / scale)

    result = GradCheckResult(name=name, max_rel_error=max(errors) if errors else 0.0, per_input=errors)
    logger.debug(f"gradcheck {name}: max rel error {result.max_rel_error:.3e}")
    return result


def check_module(module: nn.Module, *inputs: torch.Tensor, name: str = "module", seed: int = 0) -> GradCheckResult:
    """Finite-difference check over a module's inputs and all its trainable parameters."""
    module = module.to(torch.float64)
    params = [p for p in module.parameters() if p.requires_grad]
    names = [n for n, p in module.named_parameters() if p.requires_grad]
    n_inputs = len(inputs)

    def fn(*args: torch.Tensor) -> torch.Tensor:
        originals = {n: p for n, p in zip(names, params)}
        replaced = dict(zip(names, args[n_inputs:]))
        return torch.func.functional_call(module, {**originals, **replaced}, tuple(args[:n_inputs]))

    leaves = [x.detach().to(torch.float64).requires_grad_(x.is_floating_point()) for x in inputs]
    leaves += [p.detach().clone().requires_grad_(True) for p in params]
    return finite_difference_check(fn, leaves, name=name, seed=seed)


def primitive_suite(seed: int = 0) -> Dict[str, Tuple[Callable[..., torch.Tensor], List[torch.Tensor]]]:
    """
    Every primitive the encoders are built from, paired with small random
    float64 inputs for gradient checking.
    """
    g = torch.Generator().manual_seed(seed)

    def rand(*shape: int) -> torch.Tensor:
        return torch.randn(*shape, generator=g, dtype=torch.float64, requires_grad=True)

    def batch_norm(train: bool) -> Callable[..., torch.Tensor]:
        def fn(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
            channels = x.shape[1]
            running_mean = torch.linspace(-0.5, 0.5, channels, dtype=x.dtype)
            running_var = torch.linspace(0.5, 1.5, channels, dtype=x.dtype)
            return F.batch_norm(x, running_mean, running_var, weight, bias, training=train, momentum=0.1, eps=1e-5)
        return fn

    def dropout(x: torch.Tensor) -> torch.Tensor:
        mask_gen = torch.Generator().manual_seed(seed + 1)
        keep = (torch.rand(x.shape, generator=mask_gen) >= 0.25).to(x.dtype)
        return x * keep / 0.75

    return {
        "conv1d": (lambda x, w, b: F.conv1d(x, w, b, stride=2, padding=2, dilation=2), [rand(2, 3, 12), rand(4, 3, 3), rand(4)]),
        "conv2d": (lambda x, w, b: F.conv2d(x, w, b, stride=2, padding=1), [rand(2, 2, 6, 5), rand(3, 2, 3, 3), rand(3)]),
        "affine": (lambda x, w, b: F.linear(x, w, b), [rand(4, 5), rand(3, 5), rand(3)]),
        "batchnorm1d_train": (batch_norm(True), [rand(4, 3, 5), rand(3), rand(3)]),
        "batchnorm1d_eval": (batch_norm(False), [rand(4, 3, 5), rand(3), rand(3)]),
        "batchnorm2d_train": (batch_norm(True), [rand(3, 2, 4, 3), rand(2), rand(2)]),
        "batchnorm2d_eval": (batch_norm(False), [rand(3, 2, 4, 3), rand(2), rand(2)]),
        "layernorm": (lambda x, w, b: F.layer_norm(x, (x.shape[-1],), w, b, eps=1e-5), [rand(3, 6), rand(6), rand(6)]),
        "relu": (F.relu, [rand(5, 7)]),
        "dropout": (dropout, [rand(4, 6)]),
        "avgpool1d": (lambda x: F.avg_pool1d(x, 2), [rand(2, 3, 8)]),
        "adaptive_avgpool1d": (lambda x: F.adaptive_avg_pool1d(x, 1), [rand(2, 3, 7)]),
        "adaptive_avgpool2d": (lambda x: F.adaptive_avg_pool2d(x, 1), [rand(2, 3, 4, 5)]),
        "concat": (lambda a, b: torch.cat([a, b], dim=1), [rand(3, 2), rand(3, 4)]),
    }


# =============================================================================
# Optimization
# =============================================================================


class Adam(torch.optim.Adam):
    """
    Classic Adam: weight decay is an L2 term added to the gradient.

    A step whose gradients contain a non-finite value is skipped and counted
    in `skipped_steps`.
    """

    def __init__(self, params, lr: float = 1e-3, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        self.skipped_steps = 0

    @torch.no_grad()
    def step(self, closure=None):
        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    self.skipped_steps += 1
                    logger.warning(f"Skipping optimizer step with non-finite gradient ({self.skipped_steps} so far)")
                    return None
        return super().step(closure)


def cosine_lr(t: int, total: int, lr0: float, lr_min: float = 0.0) -> float:
    """lr(t) = lr_min + 0.5 (lr0 - lr_min) (1 + cos(pi t / T))."""
    if total == 0:
        raise ValueError("cosine schedule needs T > 0")
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / total))


def plateau_lr(history: Sequence[float], patience: int, factor: float, threshold: float = 1e-4) -> float:
    """
    Learning-rate multiplier after replaying a minimized metric history.

    The multiplier drops by `factor` each time `patience` consecutive epochs
    fail to beat the best value by more than `threshold` (relative); the
    counter restarts after every drop.
    """
    if not 0.0 < factor < 1.0:
        raise ValueError(f"factor must be in (0, 1), got {factor}")
    multiplier = 1.0
    best = math.inf
    bad_epochs = 0
    for value in history:
        improved = best == math.inf or value < best - abs(best) * threshold
        if improved:
            best = value
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= patience:
                multiplier *= factor
                bad_epochs = 0
    return multiplier


def clip_global_norm(parameters: Iterable[torch.nn.Parameter], max_norm: float = 1.0) -> float:
    """Scale gradients so their global L2 norm is at most max_norm. Returns the norm before clipping."""
    params = [p for p in parameters if p.grad is not None]
    if not params:
        return 0.0
    return float(torch.nn.utils.clip_grad_norm_(params, max_norm))


def global_grad_norm(parameters: Iterable[torch.nn.Parameter]) -> float:
    grads = [p.grad.detach().reshape(-1) for p in parameters if p.grad is not None]
    if not grads:
        return 0.0
    return float(torch.linalg.vector_norm(torch.cat(grads)))


# =============================================================================
# Checkpoints
# =============================================================================


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray]
    hyperparameters: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    schema_version: int = CHECKPOINT_SCHEMA_VERSION

    def subset(self, prefix: str) -> Dict[str, np.ndarray]:
        """Tensors under a dotted prefix, with the prefix stripped."""
        cut = len(prefix) + 1
        return {name[cut:]: value for name, value in self.tensors.items() if name.startswith(prefix + ".")}

    def has(self, prefix: str) -> bool:
        return any(name.startswith(prefix + ".") for name in self.tensors)


TensorLike = Union[torch.Tensor, np.ndarray]


def _as_array(name: str, value: TensorLike) -> Tuple[str, np.ndarray]:
    if isinstance(value, torch.Tensor):
        if value.dtype not in _DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {value.dtype}")
        dtype = _DTYPES[value.dtype]
        array = value.detach().cpu().numpy()
    else:
        dtype = str(value.dtype)
        if dtype not in _NUMPY_DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {dtype}")
        array = value
    return dtype, np.ascontiguousarray(array, dtype=_NUMPY_DTYPES[dtype])


def checkpoint_save(
    path: Path,
    tensors: Mapping[str, TensorLike],
    hyperparameters: Optional[dict] = None,
    metadata: Optional[dict] = None,
) -> None:
    """
    Write magic, header length, JSON header and little-endian payloads.

    The header holds the schema version, the hyperparameters, free-form
    metadata and a tensor directory of dtype, shape, offset and byte count.
    """
    directory = {}
    payloads = []
    offset = 0
    for name, value in tensors.items():
        dtype, array = _as_array(name, value)
        raw = array.tobytes()
        directory[name] = {"dtype": dtype, "shape": list(array.shape), "offset": offset, "nbytes": len(raw)}
        payloads.append(raw)
        offset += len(raw)

    header = json.dumps({
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "hyperparameters": hyperparameters or {},
        "metadata": metadata or {},
        "tensors": directory,
    }, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", len(header)))
        handle.write(header)
        for raw in payloads:
            handle.write(raw)
    logger.info(f"Saved checkpoint {path} ({len(directory)} tensors, {offset} payload bytes)")


def checkpoint_load(path: Path) -> Checkpoint:
    """
    Read a checkpoint written by checkpoint_save.

    Raises:
        CheckpointError: bad magic, schema version mismatch, truncated or
            inconsistent tensor payload
    """
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e

    version = header.get("schema_version")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointError(f"{path}: schema version {version}, expected {CHECKPOINT_SCHEMA_VERSION}")

    payload = data[12 + header_len:]
    tensors = {}
    for name, entry in header["tensors"].items():
        dtype = np.dtype(_NUMPY_DTYPES[entry["dtype"]])
        expected = int(np.prod(entry["shape"], dtype=np.int64)) * dtype.itemsize
        start, nbytes = entry["offset"], entry["nbytes"]
        if nbytes != expected:
            raise CheckpointError(f"{path}: tensor {name} declares {nbytes} bytes, shape needs {expected}")
        if start + nbytes > len(payload):
            raise CheckpointError(f"{path}: payload truncated inside tensor {name}")
        tensors[name] = np.frombuffer(payload, dtype=dtype, count=expected // dtype.itemsize, offset=start).reshape(entry["shape"]).copy()

    return Checkpoint(
        tensors=tensors,
        hyperparameters=header.get("hyperparameters", {}),
        metadata=header.get("metadata", {}),
        schema_version=version,
    )


def module_tensors(module: nn.Module, prefix: str) -> Dict[str, torch.Tensor]:
    """State dict (parameters and buffers) under a dotted prefix."""
    return {f"{prefix}.{name}": value for name, value in module.state_dict().items()}


def restore_module(module: nn.Module, checkpoint: Checkpoint, prefix: str) -> None:
    """
    Strictly load a module's state from checkpoint tensors under prefix.

    Raises:
        CheckpointError: missing tensor or shape mismatch
    """
    stored = checkpoint.subset(prefix)
    state = module.state_dict()
    restored = {}
    for name, current in state.items():
        if name not in stored:
            raise CheckpointError(f"missing tensor {prefix}.{name}")
        value = torch.from_numpy(stored[name].copy())
        if tuple(value.shape) != tuple(current.shape):
            raise CheckpointError(f"tensor {prefix}.{name}: shape {tuple(value.shape)} vs model {tuple(current.shape)}")
        restored[name] = value.to(current.dtype)
    module.load_state_dict(restored, strict=True)


def optimizer_tensors(optimizer: torch.optim.Optimizer, named_params: Mapping[str, torch.nn.Parameter]) -> Dict[str, torch.Tensor]:
    """Adam moment buffers keyed by parameter name."""
    lookup = {id(p): name for name, p in named_params.items()}
    out = {}
    for p, state in optimizer.state.items():
        name = lookup.get(id(p))
        if name is None:
            continue
        for key in ("exp_avg", "exp_avg_sq"):
            if key in state:
                out[f"optim.{name}.{key}"] = state[key]
        if "step" in state:
            out[f"optim.{name}.step"] = torch.as_tensor(state["step"], dtype=torch.float64).reshape(1)
    return out
