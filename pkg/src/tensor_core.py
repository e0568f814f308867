"""
Tensor plumbing shared by every model: shape and contract checks, the
finite-difference gradient oracle, the RangerLite optimizer, Xavier
initialisation and the RGVAE1 checkpoint codec.

Dense tensors and reverse-mode differentiation come from PyTorch.
"""

import logging
import struct
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch.optim.optimizer import Optimizer

import config

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RGVAE1\n"
CONFIG_RECORD = "config"


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when a precondition of an operation is violated."""


class CheckpointFormatError(ValueError):
    """Raised for unreadable or malformed checkpoint files."""


def check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"Shape mismatch for {what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def check_last_dim(a: torch.Tensor, b: torch.Tensor, what: str = "attributes") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"Dimension mismatch for {what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """``torch.matmul`` with a ShapeError naming both shapes."""
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError(f"Cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return torch.matmul(a, b)


def backward(loss: torch.Tensor) -> None:
    """Backpropagate a scalar loss into every leaf that requires grad."""
    if loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


def check_gradients(f: Callable[..., torch.Tensor], *points: torch.Tensor, h: float = 1e-5) -> float:
    """
    Compare autograd gradients of a scalar function with central differences.

    Args:
        f: Function of one or more tensors returning a scalar tensor
        points: Evaluation point, one tensor per argument (cast to float64)
        h: Finite-difference step

    Returns:
        max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    """
    inputs = [p.detach().to(torch.float64).clone().requires_grad_(True) for p in points]
    value = f(*inputs)
    if value.numel() != 1:
        raise ContractError(f"check_gradients needs a scalar function, got shape {tuple(value.shape)}")
    analytic = torch.autograd.grad(value, inputs, allow_unused=True)

    worst = 0.0
    with torch.no_grad():
        for x, grad in zip(inputs, analytic):
            grad = torch.zeros_like(x) if grad is None else grad
            flat = x.view(-1)
            for idx in range(flat.numel()):
                original = flat[idx].item()
                flat[idx] = original + h
                upper = f(*inputs).item()
                flat[idx] = original - h
                lower = f(*inputs).item()
                flat[idx] = original
                numeric = (upper - lower) / (2 * h)
                exact = grad.view(-1)[idx].item()
                denom = max(abs(exact), abs(numeric), 1e-8)
                worst = max(worst, abs(exact - numeric) / denom)
    return worst


def centralize_gradient(grad: torch.Tensor) -> torch.Tensor:
    """Zero-mean the gradient over all axes but the first (over the vector for rank 1)."""
    if grad.dim() >= 2:
        return grad - grad.mean(dim=tuple(range(1, grad.dim())), keepdim=True)
    if grad.dim() == 1 and grad.numel() > 1:
        return grad - grad.mean()
    return grad


class RangerLite(Optimizer):
    """
    Adam with gradient centralization and lookahead.

    Every ``lookahead_k`` steps the slow weights move towards the fast ones,
    ``slow += alpha * (fast - slow)``, and the fast weights are reset to them.
    """

    def __init__(self, params, lr: float = config.LEARNING_RATE,
                 betas: Tuple[float, float] = config.ADAM_BETAS,
                 eps: float = config.ADAM_EPS,
                 lookahead_k: int = config.LOOKAHEAD_K,
                 lookahead_alpha: float = config.LOOKAHEAD_ALPHA,
                 use_gradient_centralization: bool = config.USE_GRADIENT_CENTRALIZATION):
        if not 0.0 < lr:
            raise ValueError(f"Invalid learning rate: {lr}")
        if not 0.0 <= eps:
            raise ValueError(f"Invalid epsilon value: {eps}")
        if not 0.0 <= betas[0] < 1.0:
            raise ValueError(f"Invalid beta parameter at index 0: {betas[0]}")
        if not 0.0 <= betas[1] < 1.0:
            raise ValueError(f"Invalid beta parameter at index 1: {betas[1]}")
        if not 0.0 < lookahead_alpha <= 1.0:
            raise ValueError(f"Invalid lookahead alpha: {lookahead_alpha}")
        if not lookahead_k >= 1:
            raise ValueError(f"Invalid lookahead k: {lookahead_k}")

        defaults = dict(lr=lr, betas=betas, eps=eps, lookahead_k=lookahead_k,
                        lookahead_alpha=lookahead_alpha,
                        use_gradient_centralization=use_gradient_centralization)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            beta1, beta2 = group['betas']
            for p in group['params']:
                if p.grad is None:
                    if p.requires_grad:
                        raise ContractError("Parameter without gradient; call backward first")
                    continue
                grad = p.grad
                if grad.is_sparse:
                    raise ContractError("RangerLite does not support sparse gradients")

                state = self.state[p]
                if len(state) == 0:
                    state['step'] = 0
                    state['exp_avg'] = torch.zeros_like(p)
                    state['exp_avg_sq'] = torch.zeros_like(p)
                    state['slow'] = p.detach().clone()

                if group['use_gradient_centralization'] and grad.dim() >= 2:
                    grad = centralize_gradient(grad)

                state['step'] += 1
                step = state['step']
                exp_avg, exp_avg_sq = state['exp_avg'], state['exp_avg_sq']

                exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
                exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)

                bias_correction1 = 1 - beta1 ** step
                bias_correction2 = 1 - beta2 ** step
                denom = (exp_avg_sq / bias_correction2).sqrt_().add_(group['eps'])
                p.addcdiv_(exp_avg, denom, value=-group['lr'] / bias_correction1)

                if step % group['lookahead_k'] == 0:
                    slow = state['slow']
                    slow.add_(p - slow, alpha=group['lookahead_alpha'])
                    p.copy_(slow)

        return loss


def clip_gradients(parameters: Iterable[torch.Tensor], max_norm: float = config.CLIPGRAD_MAX_NORM) -> float:
    """Global-norm clipping; returns the norm before clipping."""
    return float(torch.nn.utils.clip_grad_norm_(list(parameters), max_norm))


def xavier_uniform_init(shape: Sequence[int], gain: float = config.INIT_GAIN,
                        generator: Optional[torch.Generator] = None,
                        dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    Uniform on [-b, b] with b = gain * sqrt(6 / (fan_in + fan_out)).

    Args:
        shape: (fan_in, fan_out)
        gain: Scale of the bound
        generator: Seeded torch generator for reproducibility
    """
    if len(shape) != 2:
        raise ContractError(f"xavier_uniform_init needs a rank-2 shape, got {tuple(shape)}")
    fan_in, fan_out = shape
    bound = gain * (6.0 / (fan_in + fan_out)) ** 0.5
    weights = torch.empty(tuple(shape), dtype=dtype)
    if bound == 0:
        return weights.zero_()
    return weights.uniform_(-bound, bound, generator=generator)


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, torch.Tensor],
                    run_config: Optional[Dict[str, object]] = None) -> None:
    """
    Write named tensors in the RGVAE1 format.

    Layout: magic, then per record name length (u32), name, rank (u32), dims
    (u32 each), row-major float32 payload, all little-endian. The reserved
    ``config`` record carries a key=value text block as raw UTF-8 bytes. An
    empty-name record terminates the file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        if run_config is not None:
            text = "".join(f"{key}={value}\n" for key, value in sorted(run_config.items()))
            payload = text.encode('utf-8')
            _write_header(f, CONFIG_RECORD, (len(payload),))
            f.write(payload)
        for name, tensor in tensors.items():
            if name == CONFIG_RECORD or not name:
                raise ContractError(f"Reserved tensor name: {name!r}")
            array = tensor.detach().cpu().to(torch.float32).contiguous().numpy()
            _write_header(f, name, array.shape)
            f.write(array.astype('<f4', copy=False).tobytes(order='C'))
        f.write(struct.pack('<I', 0))
    logger.info(f"Saved checkpoint with {len(tensors)} tensors to {path}")


def _write_header(f, name: str, dims: Sequence[int]) -> None:
    encoded = name.encode('utf-8')
    f.write(struct.pack('<I', len(encoded)))
    f.write(encoded)
    f.write(struct.pack('<I', len(dims)))
    for dim in dims:
        f.write(struct.pack('<I', int(dim)))


def _read_exact(f, size: int, path: Path) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise CheckpointFormatError(f"{path}: truncated checkpoint")
    return data


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, torch.Tensor], Dict[str, str]]:
    """
    Read an RGVAE1 checkpoint.

    Returns:
        Tuple of (tensors by name in file order, config key=value pairs)
    """
    path = Path(path)
    try:
        f = open(path, 'rb')
    except OSError as e:
        raise CheckpointFormatError(f"{path}: cannot open checkpoint ({e})")

    tensors: Dict[str, torch.Tensor] = {}
    run_config: Dict[str, str] = {}
    with f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"{path}: not an RGVAE1 checkpoint")
        while True:
            (name_length,) = struct.unpack('<I', _read_exact(f, 4, path))
            if name_length == 0:
                break
            try:
                name = _read_exact(f, name_length, path).decode('utf-8')
            except UnicodeDecodeError:
                raise CheckpointFormatError(f"{path}: record name is not UTF-8")
            (rank,) = struct.unpack('<I', _read_exact(f, 4, path))
            dims = struct.unpack(f'<{rank}I', _read_exact(f, 4 * rank, path)) if rank else ()

            if name == CONFIG_RECORD:
                text = _read_exact(f, dims[0], path).decode('utf-8')
                for line in text.splitlines():
                    if '=' in line:
                        key, value = line.split('=', 1)
                        run_config[key] = value
                continue

            count = int(np.prod(dims)) if dims else 1
            payload = _read_exact(f, 4 * count, path)
            array = np.frombuffer(payload, dtype='<f4').reshape(dims).astype(np.float32)
            tensors[name] = torch.from_numpy(array.copy())

    logger.info(f"Loaded checkpoint with {len(tensors)} tensors from {path}")
    return tensors, run_config
