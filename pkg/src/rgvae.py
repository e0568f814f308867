"""
Relational Graph VAE: MLP or GCN encoder, reparametrization, MLP decoder,
discrete sampling, the standard and graph-matched losses, the training loop
and the negative-ELBO link-prediction scorer.
"""

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
from tqdm import tqdm

import config
from src.eval_lp import evaluate, subset_sample
from src.graph_match import apply_permutation, match, permutation_rate
from src.kg_data import SparseGraph, Triple, TripleStore, triples_to_graphs
from src.tensor_core import (
    ContractError,
    RangerLite,
    ShapeError,
    backward,
    clip_gradients,
    load_checkpoint,
    save_checkpoint,
    xavier_uniform_init,
)

logger = logging.getLogger(__name__)

ENCODER_KINDS = ('mlp', 'gcn')
MODEL_KINDS = {'rgvae': 'mlp', 'crgvae': 'gcn'}

# Relative improvement a refinement step must exceed
_SWAP_MARGIN = 1e-9


@dataclass
class RgvaeConfig:
    """Hyperparameters of one RGVAE."""

    d_e: int
    d_r: int
    n: int = config.N_NODES
    d_z: int = config.D_Z
    d_h: int = config.D_H
    dropout: float = config.DROPOUT
    beta: float = config.BETA
    delta: float = config.DELTA
    perminv: bool = config.PERMINV
    encoder_kind: str = config.ENCODER
    clipgrad: bool = config.CLIPGRAD
    match_iterations: int = config.MATCH_ITERATIONS

    def __post_init__(self):
        for name in ('d_e', 'd_r', 'n', 'd_z', 'd_h', 'match_iterations'):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.beta < 0 or self.delta < 0:
            raise ValueError(f"beta and delta must be non-negative, got {self.beta}, {self.delta}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"Unknown encoder kind: {self.encoder_kind}")

    @property
    def input_dim(self) -> int:
        return input_dim(self)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, str]) -> 'RgvaeConfig':
        """Rebuild from the string key=value pairs stored in a checkpoint."""
        kwargs = {}
        for f in fields(cls):
            if f.name not in values:
                continue
            raw = values[f.name]
            if f.type in (bool, 'bool'):
                kwargs[f.name] = str(raw).lower() in ('1', 'true', 'yes')
            elif f.type in (int, 'int'):
                kwargs[f.name] = int(raw)
            elif f.type in (float, 'float'):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = str(raw)
        return cls(**kwargs)


def input_dim(cfg: RgvaeConfig) -> int:
    """Width of a flattened graph: n² + n²·d_r + n·d_e."""
    return cfg.n * cfg.n + cfg.n * cfg.n * cfg.d_r + cfg.n * cfg.d_e


@dataclass
class LatentCode:
    mean: torch.Tensor
    logvar: torch.Tensor
    z: torch.Tensor
    eps: torch.Tensor


@dataclass
class GraphLogits:
    """Decoder output: A (b, n, n), E (b, n, n, d_r), F (b, n, d_e), all unnormalised."""

    A: torch.Tensor
    E: torch.Tensor
    F: torch.Tensor

    def activate(self) -> SparseGraph:
        """Sigmoid on the adjacency, softmax over the last axis of E and F."""
        return SparseGraph(
            A=torch.sigmoid(self.A),
            E=torch.softmax(self.E, dim=-1),
            F=torch.softmax(self.F, dim=-1),
        )


@dataclass
class LossBreakdown:
    """Scalar objective plus the per-graph pieces it was built from."""

    total: torch.Tensor
    recon: torch.Tensor
    kl: torch.Tensor
    reg: torch.Tensor
    permutation: Optional[torch.Tensor] = None


def reparametrize(mean: torch.Tensor, logvar: torch.Tensor, eps: Optional[torch.Tensor] = None,
                  generator: Optional[torch.Generator] = None) -> LatentCode:
    """z = mean + exp(logvar / 2)·eps, with eps ~ N(0, 1) unless supplied."""
    if mean.shape != logvar.shape:
        raise ShapeError(f"Shape mismatch for mean and logvar: {tuple(mean.shape)} vs {tuple(logvar.shape)}")
    if eps is None:
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
    z = mean + torch.exp(0.5 * logvar) * eps
    return LatentCode(mean=mean, logvar=logvar, z=z, eps=eps)


def kl_divergence(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Per-graph KL of N(mean, exp(logvar)) against N(0, I), summed over latent dims."""
    return -0.5 * torch.sum(1 + logvar - mean.pow(2) - logvar.exp(), dim=-1)


def regularization(latent: LatentCode, beta: float, delta: float) -> torch.Tensor:
    """beta·|KL − delta| per graph; delta = 0 is the plain weighted KL."""
    return beta * torch.abs(kl_divergence(latent.mean, latent.logvar) - delta)


def _init_linear(layer: nn.Linear, generator: Optional[torch.Generator], gain: float) -> None:
    weight = xavier_uniform_init((layer.in_features, layer.out_features), gain=gain, generator=generator)
    with torch.no_grad():
        layer.weight.copy_(weight.t())
        layer.bias.zero_()


class MlpEncoder(nn.Module):
    """Flattened graph -> (mean, logvar)."""

    def __init__(self, cfg: RgvaeConfig):
        super().__init__()
        self.cfg = cfg
        self.fc1 = nn.Linear(cfg.input_dim, 2 * cfg.d_h)
        self.fc2 = nn.Linear(2 * cfg.d_h, cfg.d_h)
        self.fc3 = nn.Linear(cfg.d_h, 2 * cfg.d_z)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, graphs: SparseGraph):
        x = graphs.flatten().to(self.fc1.weight.dtype)
        if x.shape[-1] != self.cfg.input_dim:
            raise ShapeError(f"Encoder expects width {self.cfg.input_dim}, got {tuple(x.shape)}")
        h = self.dropout(torch.relu(self.fc1(x)))
        h = torch.relu(self.fc2(h))
        out = self.fc3(h)
        return out[:, :self.cfg.d_z], out[:, self.cfg.d_z:]


def normalized_adjacency(A: torch.Tensor) -> torch.Tensor:
    """Row-normalised A + I."""
    n = A.shape[-1]
    A_hat = A + torch.eye(n, dtype=A.dtype, device=A.device)
    return A_hat / A_hat.sum(dim=-1, keepdim=True)


class GcnEncoder(nn.Module):
    """Two graph convolutions over node features [E flattened per node, F], then a linear head."""

    def __init__(self, cfg: RgvaeConfig):
        super().__init__()
        self.cfg = cfg
        node_features = cfg.d_e + cfg.n * cfg.d_r
        self.conv1 = nn.Linear(node_features, cfg.d_h)
        self.conv2 = nn.Linear(cfg.d_h, cfg.d_h)
        self.head = nn.Linear(cfg.n * cfg.d_h, 2 * cfg.d_z)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, graphs: SparseGraph):
        dtype = self.conv1.weight.dtype
        b, n = len(graphs), graphs.n
        if n != self.cfg.n or graphs.F.shape[-1] != self.cfg.d_e or graphs.E.shape[-1] != self.cfg.d_r:
            raise ShapeError(f"Graph shapes {tuple(graphs.E.shape)}, {tuple(graphs.F.shape)} do not fit the encoder")
        A_hat = normalized_adjacency(graphs.A.to(dtype))
        X = torch.cat([graphs.E.to(dtype).reshape(b, n, n * self.cfg.d_r), graphs.F.to(dtype)], dim=-1)

        h = torch.relu(A_hat @ self.conv1(X))
        h = self.dropout(h)
        h = torch.relu(A_hat @ self.conv2(h))
        out = self.head(h.reshape(b, n * self.cfg.d_h))
        return out[:, :self.cfg.d_z], out[:, self.cfg.d_z:]


class Decoder(nn.Module):
    """Latent code -> GraphLogits, mirroring the MLP encoder."""

    def __init__(self, cfg: RgvaeConfig):
        super().__init__()
        self.cfg = cfg
        self.fc1 = nn.Linear(cfg.d_z, cfg.d_h)
        self.fc2 = nn.Linear(cfg.d_h, 2 * cfg.d_h)
        self.fc3 = nn.Linear(2 * cfg.d_h, cfg.input_dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, z: torch.Tensor) -> GraphLogits:
        if z.shape[-1] != self.cfg.d_z:
            raise ShapeError(f"Decoder expects latent width {self.cfg.d_z}, got {tuple(z.shape)}")
        h = torch.relu(self.fc1(z))
        h = self.dropout(torch.relu(self.fc2(h)))
        out = self.fc3(h)

        n, d_r, d_e = self.cfg.n, self.cfg.d_r, self.cfg.d_e
        b = out.shape[0]
        a_end = n * n
        e_end = a_end + n * n * d_r
        return GraphLogits(
            A=out[:, :a_end].reshape(b, n, n),
            E=out[:, a_end:e_end].reshape(b, n, n, d_r),
            F=out[:, e_end:].reshape(b, n, d_e),
        )


class RGVAE(nn.Module):
    """
    Relational Graph VAE.

    Args:
        cfg: Model hyperparameters
        seed: Seed for the Xavier initialisation
        gain: Xavier gain
    """

    def __init__(self, cfg: RgvaeConfig, seed: int = config.SEED, gain: float = config.INIT_GAIN):
        super().__init__()
        self.cfg = cfg
        self.encoder = MlpEncoder(cfg) if cfg.encoder_kind == 'mlp' else GcnEncoder(cfg)
        self.decoder = Decoder(cfg)

        generator = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                _init_linear(module, generator, gain)

    @property
    def model_kind(self) -> str:
        return 'rgvae' if self.cfg.encoder_kind == 'mlp' else 'crgvae'

    def encode(self, graphs: SparseGraph, eps: Optional[torch.Tensor] = None,
               generator: Optional[torch.Generator] = None) -> LatentCode:
        mean, logvar = self.encoder(graphs)
        return reparametrize(mean, logvar, eps=eps, generator=generator)

    def encode_mean(self, graphs: SparseGraph) -> LatentCode:
        """Latent code with eps = 0, so z is the mean."""
        mean, logvar = self.encoder(graphs)
        return reparametrize(mean, logvar, eps=torch.zeros_like(mean))

    def decode(self, z: torch.Tensor) -> GraphLogits:
        return self.decoder(z)

    def forward(self, graphs: SparseGraph, eps: Optional[torch.Tensor] = None,
                generator: Optional[torch.Generator] = None):
        latent = self.encode(graphs, eps=eps, generator=generator)
        return self.decode(latent.z), latent

    def loss(self, target: SparseGraph, logits: GraphLogits, latent: LatentCode,
             permutation: Optional[torch.Tensor] = None) -> LossBreakdown:
        if self.cfg.perminv:
            return matched_breakdown(target, logits, latent, self.cfg.beta, self.cfg.delta,
                                     permutation=permutation, iterations=self.cfg.match_iterations)
        return standard_breakdown(target, logits, latent, self.cfg.beta, self.cfg.delta)

    def graphs_for(self, triples: Sequence[Triple]) -> SparseGraph:
        return triples_to_graphs(triples, self.cfg.n, d_e=self.cfg.d_e, d_r=self.cfg.d_r,
                                 dtype=self.decoder.fc1.weight.dtype)

    def save(self, path: Union[str, Path], extra: Optional[Dict[str, object]] = None) -> None:
        run_config = {'model': self.model_kind, **self.cfg.to_dict(), **(extra or {})}
        save_checkpoint(path, dict(self.state_dict()), run_config)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'RGVAE':
        tensors, run_config = load_checkpoint(path)
        cfg = RgvaeConfig.from_dict(run_config)
        model = cls(cfg)
        model.load_state_dict(tensors)
        model.eval()
        return model


def _clip(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(config.PROB_CLIP, 1 - config.PROB_CLIP)


def _no_zero(x: torch.Tensor) -> torch.Tensor:
    return torch.where(x == 0, torch.ones_like(x), x)


def _check_target(target: SparseGraph, logits: GraphLogits) -> None:
    if target.E.shape[-1] != logits.E.shape[-1]:
        raise ShapeError(f"Edge attributes {tuple(target.E.shape)} vs {tuple(logits.E.shape)}")
    if target.F.shape[-1] != logits.F.shape[-1]:
        raise ShapeError(f"Node attributes {tuple(target.F.shape)} vs {tuple(logits.F.shape)}")
    if len(target) != logits.A.shape[0]:
        raise ShapeError(f"Batch sizes {len(target)} vs {logits.A.shape[0]}")


def reconstruction_standard(target: SparseGraph, logits: GraphLogits) -> torch.Tensor:
    """Per-graph BCE on A plus categorical cross-entropy on E (labelled edges) and F."""
    _check_target(target, logits)
    dtype = logits.A.dtype
    A, E, F = target.A.to(dtype), target.E.to(dtype), target.F.to(dtype)
    if target.A.shape != logits.A.shape:
        raise ShapeError(f"Adjacency {tuple(target.A.shape)} vs {tuple(logits.A.shape)}")

    p_A = _clip(torch.sigmoid(logits.A))
    bce = -(A * torch.log(p_A) + (1 - A) * torch.log(1 - p_A)).flatten(1).sum(dim=1)
    ce_E = -(E * torch.log(_clip(torch.softmax(logits.E, dim=-1)))).flatten(1).sum(dim=1)
    ce_F = -(F * torch.log(_clip(torch.softmax(logits.F, dim=-1)))).flatten(1).sum(dim=1)
    return bce + ce_E + ce_F


def _aligned_nll(A: torch.Tensor, E: torch.Tensor, F: torch.Tensor, probs: SparseGraph,
                 X: torch.Tensor) -> torch.Tensor:
    """Per-graph negative log-likelihood of the target under the prediction aligned by X."""
    A_perm, E_perm, F_perm = apply_permutation(X, A, probs.E, probs.F)

    n, k = A.shape[1], A_perm.shape[1]
    p_A = _clip(probs.A)
    loglik = A_perm * torch.log(p_A) + (1 - A_perm) * torch.log(1 - p_A)
    eye = torch.eye(k, dtype=loglik.dtype, device=loglik.device)
    logp_A = (loglik * eye).sum(dim=(1, 2)) / k + (loglik * (1 - eye)).sum(dim=(1, 2)) / (k * k)

    node_match = _no_zero((F * _clip(F_perm)).sum(dim=-1))
    logp_F = torch.log(node_match).sum(dim=1) / n

    edge_match = _no_zero((E * _clip(E_perm)).sum(dim=-1))
    edges = A.sum(dim=(1, 2)).clamp(min=1)
    logp_E = (torch.log(edge_match) * A).sum(dim=(1, 2)) / edges

    return -(logp_A + logp_F + logp_E)


@torch.no_grad()
def refine_permutation(A: torch.Tensor, E: torch.Tensor, F: torch.Tensor, probs: SparseGraph,
                       X: torch.Tensor, frozen: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Improve a matching by pairwise swaps of target nodes, then fall back to the identity.

    A swap or the identity is taken only when it lowers the likelihood cost by more
    than a round-off margin. Graphs flagged in ``frozen`` keep X unchanged.
    """
    b, n, k = X.shape
    movable = torch.ones(b, dtype=torch.bool, device=X.device) if frozen is None else ~frozen
    best = _aligned_nll(A, E, F, probs, X)

    def accept(candidate: torch.Tensor):
        nonlocal X, best
        cost = _aligned_nll(A, E, F, probs, candidate)
        better = movable & (cost < best - _SWAP_MARGIN * best.abs().clamp(min=1.0))
        if better.any():
            X = torch.where(better[:, None, None], candidate, X)
            best = torch.where(better, cost, best)
        return bool(better.any())

    for _ in range(n * n):
        improved = False
        for i in range(n):
            for j in range(i + 1, n):
                order = list(range(n))
                order[i], order[j] = j, i
                improved |= accept(X[:, order])
        if not improved:
            break

    accept(torch.eye(n, k, dtype=X.dtype, device=X.device).expand(b, n, k))
    return X


def reconstruction_matched(target: SparseGraph, logits: GraphLogits,
                           permutation: Optional[torch.Tensor] = None,
                           iterations: int = config.MATCH_ITERATIONS):
    """
    Per-graph negative log-likelihood after aligning prediction and target.

    Without a given permutation, X comes from max-pool graph matching on the
    detached prediction and is refined with :func:`refine_permutation`, so the
    cost never exceeds the unaligned (identity) cost. Degenerate matchings stay
    at the identity.

    Returns:
        Tuple of (reconstruction (b,), permutation (b, n, k))
    """
    _check_target(target, logits)
    dtype = logits.A.dtype
    probs = logits.activate()
    A = target.A.to(dtype)
    E = target.E.to(dtype)
    F = target.F.to(dtype)

    if permutation is None:
        detached = SparseGraph(probs.A.detach(), probs.E.detach(), probs.F.detach())
        permutation, degenerate = match(target.to(dtype), detached, iterations)
        permutation = refine_permutation(A, E, F, detached, permutation.to(dtype), frozen=degenerate)
    X = permutation.to(dtype).detach()
    return _aligned_nll(A, E, F, probs, X), X


def standard_breakdown(target: SparseGraph, logits: GraphLogits, latent: LatentCode,
                       beta: float, delta: float) -> LossBreakdown:
    recon = reconstruction_standard(target, logits)
    kl = kl_divergence(latent.mean, latent.logvar)
    reg = regularization(latent, beta, delta)
    return LossBreakdown(total=(recon + reg).mean(), recon=recon, kl=kl, reg=reg)


def matched_breakdown(target: SparseGraph, logits: GraphLogits, latent: LatentCode,
                      beta: float, delta: float, permutation: Optional[torch.Tensor] = None,
                      iterations: int = config.MATCH_ITERATIONS) -> LossBreakdown:
    recon, X = reconstruction_matched(target, logits, permutation, iterations)
    kl = kl_divergence(latent.mean, latent.logvar)
    reg = regularization(latent, beta, delta)
    return LossBreakdown(total=(recon + reg).mean(), recon=recon, kl=kl, reg=reg, permutation=X)


def loss_standard(target: SparseGraph, logits: GraphLogits, latent: LatentCode,
                  beta: float = config.BETA, delta: float = config.DELTA) -> torch.Tensor:
    """Batch mean of reconstruction + beta·|KL − delta| without node alignment."""
    return standard_breakdown(target, logits, latent, beta, delta).total


def loss_matched(target: SparseGraph, logits: GraphLogits, latent: LatentCode,
                 beta: float = config.BETA, delta: float = config.DELTA,
                 permutation: Optional[torch.Tensor] = None,
                 iterations: int = config.MATCH_ITERATIONS) -> torch.Tensor:
    """
    Batch mean of the permutation-invariant reconstruction + beta·|KL − delta|.

    Args:
        permutation: Fixed (b, n, k) alignment; computed by graph matching when None
    """
    return matched_breakdown(target, logits, latent, beta, delta, permutation, iterations).total


def sample_discrete(logits: GraphLogits, generator: Optional[torch.Generator] = None,
                    deterministic: bool = False) -> SparseGraph:
    """
    Discrete graphs from decoder logits.

    Edges are Bernoulli draws on sigmoid(A) (logit > 0 when deterministic);
    edge and node attributes take the argmax, lowest index on ties. Edge
    attributes are kept only where an edge exists.
    """
    if deterministic:
        A = (logits.A > 0).to(logits.A.dtype)
    else:
        A = torch.bernoulli(torch.sigmoid(logits.A.detach()), generator=generator)
    d_r, d_e = logits.E.shape[-1], logits.F.shape[-1]
    E = nn.functional.one_hot(logits.E.argmax(dim=-1), d_r).to(A.dtype) * A[..., None]
    F = nn.functional.one_hot(logits.F.argmax(dim=-1), d_e).to(A.dtype)
    return SparseGraph(A=A.detach(), E=E.detach(), F=F.detach())


class RgvaeScorer:
    """
    Negative ELBO of single-triple graphs; higher is more plausible.

    The model is switched to eval mode once, on construction, so concurrent
    calls never see dropout. Callers that keep training put it back with
    ``model.train()``.
    """

    def __init__(self, model: RGVAE, batch_size: int = config.LP_CANDIDATE_BATCH):
        self.model = model
        self.batch_size = batch_size
        model.eval()

    @torch.no_grad()
    def __call__(self, triples: Sequence[Triple]) -> np.ndarray:
        scores = []
        for start in range(0, len(triples), self.batch_size):
            graphs = self.model.graphs_for(triples[start:start + self.batch_size])
            latent = self.model.encode_mean(graphs)
            logits = self.model.decode(latent.z)
            breakdown = self.model.loss(graphs, logits, latent)
            scores.append(-(breakdown.recon + breakdown.reg).to(torch.float64).cpu().numpy())
        return np.concatenate(scores) if scores else np.zeros(0)


@dataclass
class EpochRecord:
    epoch: int
    elbo: float
    recon: float
    kl: float
    perm_rate: float
    val_elbo: float
    mrr: Optional[float] = None


def _batches(triples: List[Triple], batch_size: int, generator: torch.Generator):
    order = torch.randperm(len(triples), generator=generator).tolist()
    for start in range(0, len(order), batch_size):
        yield [triples[i] for i in order[start:start + batch_size]]


@torch.no_grad()
def evaluate_elbo(model: RGVAE, triples: Sequence[Triple], batch_size: int = config.BATCH_SIZE) -> float:
    """Mean loss over triples using mean latents and no dropout."""
    if not triples:
        return float('nan')
    was_training = model.training
    model.eval()
    total = 0.0
    for start in range(0, len(triples), batch_size):
        batch = list(triples[start:start + batch_size])
        graphs = model.graphs_for(batch)
        latent = model.encode_mean(graphs)
        breakdown = model.loss(graphs, model.decode(latent.z), latent)
        total += float(breakdown.total) * len(batch)
    model.train(was_training)
    return total / len(triples)


def train_rgvae(model: RGVAE, store: TripleStore, epochs: int = config.EPOCHS,
                batch_size: int = config.BATCH_SIZE, optimizer: Optional[torch.optim.Optimizer] = None,
                seed: int = config.SEED, lp_every: int = 0, lp_fraction: float = 0.1,
                progress_bar: bool = True) -> List[EpochRecord]:
    """
    Train on the store's training split.

    Args:
        model: Model to train in place
        store: Dataset
        epochs: Number of passes over the training split
        batch_size: Triples per step
        optimizer: Defaults to RangerLite with the configured learning rate
        seed: Seeds shuffling and reparametrization noise
        lp_every: Run subset link prediction every this many epochs (0 disables)
        lp_fraction: Fraction of the evaluation split used for that check
        progress_bar: Whether to show progress bar

    Returns:
        One EpochRecord per epoch
    """
    if optimizer is None:
        optimizer = RangerLite(model.parameters())
    generator = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    train_split = store.training_split
    eval_split = store.evaluation_split
    if not train_split:
        raise ContractError("Training split is empty")

    history: List[EpochRecord] = []
    iterator = tqdm(range(1, epochs + 1), desc="Training RGVAE") if progress_bar else range(1, epochs + 1)
    for epoch in iterator:
        model.train()
        sums = {'elbo': 0.0, 'recon': 0.0, 'kl': 0.0, 'moved': 0.0}
        for batch in _batches(train_split, batch_size, generator):
            graphs = model.graphs_for(batch)
            latent = model.encode(graphs, generator=generator)
            logits = model.decode(latent.z)
            breakdown = model.loss(graphs, logits, latent)

            optimizer.zero_grad()
            backward(breakdown.total)
            if model.cfg.clipgrad:
                clip_gradients(model.parameters())
            optimizer.step()

            size = len(batch)
            sums['elbo'] += float(breakdown.total) * size
            sums['recon'] += float(breakdown.recon.mean()) * size
            sums['kl'] += float(breakdown.kl.mean()) * size
            if breakdown.permutation is not None:
                sums['moved'] += permutation_rate(breakdown.permutation) * size

        count = len(train_split)
        record = EpochRecord(
            epoch=epoch,
            elbo=sums['elbo'] / count,
            recon=sums['recon'] / count,
            kl=sums['kl'] / count,
            perm_rate=sums['moved'] / count,
            val_elbo=evaluate_elbo(model, eval_split, batch_size),
        )
        if lp_every and epoch % lp_every == 0 and eval_split:
            subset = subset_sample(eval_split, lp_fraction, seed)
            if subset:
                record.mrr = evaluate(subset, RgvaeScorer(model), store, progress_bar=False).mrr
                model.train()
        history.append(record)
        logger.info(f"Epoch {epoch}: elbo={record.elbo:.4f} recon={record.recon:.4f} "
                    f"kl={record.kl:.4f} perm_rate={record.perm_rate:.3f} val_elbo={record.val_elbo:.4f}")

    return history
