"""
DistMult and variational DistMult baselines with negative sampling.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

import config
from src.kg_data import BoundsError, Triple, TripleStore
from src.rgvae import kl_divergence
from src.tensor_core import (
    ContractError,
    RangerLite,
    backward,
    load_checkpoint,
    save_checkpoint,
    xavier_uniform_init,
)

logger = logging.getLogger(__name__)

LOSS_KINDS = ('bce', 'elbo')


class DistMult(nn.Module):
    """
    Bilinear-diagonal scorer: score(s, r, o) = Σ_k e_s[k]·e_r[k]·e_o[k].

    In variational mode every embedding row has a mean and a log-variance and
    rows are drawn by reparametrization.

    Args:
        n_entities: Entity vocabulary size
        n_relations: Relation vocabulary size
        d_emb: Embedding width
        variational: Learn (mean, logvar) per row
        seed: Seed for the Xavier initialisation
    """

    def __init__(self, n_entities: int, n_relations: int, d_emb: int = config.DISTMULT_DIM,
                 variational: bool = False, seed: int = config.SEED):
        super().__init__()
        if min(n_entities, n_relations, d_emb) <= 0:
            raise ValueError(f"Dimensions must be positive: {n_entities}, {n_relations}, {d_emb}")
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.d_emb = d_emb
        self.variational = variational

        generator = torch.Generator().manual_seed(seed)
        self.ent_emb = nn.Parameter(xavier_uniform_init((n_entities, d_emb), gain=1.0, generator=generator))
        self.rel_emb = nn.Parameter(xavier_uniform_init((n_relations, d_emb), gain=1.0, generator=generator))
        if variational:
            self.ent_emb_logvar = nn.Parameter(torch.full((n_entities, d_emb), config.DISTMULT_LOGVAR_INIT))
            self.rel_emb_logvar = nn.Parameter(torch.full((n_relations, d_emb), config.DISTMULT_LOGVAR_INIT))

    @property
    def model_kind(self) -> str:
        return 'vdistmult' if self.variational else 'distmult'

    def _check(self, s: torch.Tensor, r: torch.Tensor, o: torch.Tensor) -> None:
        for name, index, size in (('subject', s, self.n_entities), ('relation', r, self.n_relations),
                                  ('object', o, self.n_entities)):
            if index.numel() and (int(index.min()) < 0 or int(index.max()) >= size):
                raise BoundsError(f"{name} index out of range [0, {size})")

    def _rows(self, table: torch.Tensor, logvar: Optional[torch.Tensor], index: torch.Tensor,
              eps: Optional[float], generator: Optional[torch.Generator]) -> torch.Tensor:
        mean = table[index]
        if not self.variational:
            return mean
        std = torch.exp(0.5 * logvar[index])
        if eps is None:
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        else:
            noise = torch.full_like(mean, eps)
        return mean + std * noise

    def score(self, s: torch.Tensor, r: torch.Tensor, o: torch.Tensor, eps: Optional[float] = 1.0,
              generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """
        Scores of index triples.

        Args:
            eps: Fixed reparametrization noise; None draws it from N(0, 1)
        """
        self._check(s, r, o)
        ent_logvar = getattr(self, 'ent_emb_logvar', None)
        rel_logvar = getattr(self, 'rel_emb_logvar', None)
        head = self._rows(self.ent_emb, ent_logvar, s, eps, generator)
        rel = self._rows(self.rel_emb, rel_logvar, r, eps, generator)
        tail = self._rows(self.ent_emb, ent_logvar, o, eps, generator)
        return (head * rel * tail).sum(dim=-1)

    def forward(self, triples: torch.Tensor, eps: Optional[float] = 1.0,
                generator: Optional[torch.Generator] = None) -> torch.Tensor:
        return self.score(triples[:, 0], triples[:, 1], triples[:, 2], eps=eps, generator=generator)

    def kl(self, triples: torch.Tensor) -> torch.Tensor:
        """Mean over triples of the summed KL of their three embedding rows."""
        if not self.variational:
            return torch.zeros((), dtype=self.ent_emb.dtype)
        s, r, o = triples[:, 0], triples[:, 1], triples[:, 2]
        total = (kl_divergence(self.ent_emb[s], self.ent_emb_logvar[s])
                 + kl_divergence(self.rel_emb[r], self.rel_emb_logvar[r])
                 + kl_divergence(self.ent_emb[o], self.ent_emb_logvar[o]))
        return total.mean()

    def save(self, path: Union[str, Path], extra: Optional[Dict[str, object]] = None) -> None:
        run_config = {
            'model': self.model_kind,
            'n_entities': self.n_entities,
            'n_relations': self.n_relations,
            'd_emb': self.d_emb,
            **(extra or {}),
        }
        save_checkpoint(path, dict(self.state_dict()), run_config)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'DistMult':
        tensors, run_config = load_checkpoint(path)
        model = cls(int(run_config['n_entities']), int(run_config['n_relations']), int(run_config['d_emb']),
                    variational=run_config.get('model') == 'vdistmult')
        model.load_state_dict(tensors)
        model.eval()
        return model


def score(s: int, r: int, o: int, model: DistMult) -> float:
    """Deterministic score of one triple (eps = 1 in variational mode)."""
    with torch.no_grad():
        value = model.score(torch.tensor([s]), torch.tensor([r]), torch.tensor([o]), eps=1.0)
    return float(value[0])


def corrupt(positives: torch.Tensor, n_entities: int, negatives_per_positive: int,
            generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Replace head or tail (coin flip) with a uniformly drawn entity."""
    negatives = positives.repeat_interleave(negatives_per_positive, dim=0).clone()
    count = negatives.shape[0]
    replace_head = torch.rand(count, generator=generator) < 0.5
    entities = torch.randint(0, n_entities, (count,), generator=generator)
    negatives[:, 0] = torch.where(replace_head, entities, negatives[:, 0])
    negatives[:, 2] = torch.where(replace_head, negatives[:, 2], entities)
    return negatives


def train_step(model: DistMult, batch: Sequence[Triple], optimizer: torch.optim.Optimizer,
               negatives_per_positive: int = config.NEGATIVES_PER_POSITIVE, loss_kind: str = 'bce',
               beta: float = config.BETA, generator: Optional[torch.Generator] = None) -> float:
    """
    One optimisation step on a batch of true triples and their corruptions.

    Returns:
        Loss before the update
    """
    if loss_kind not in LOSS_KINDS:
        raise ContractError(f"Unknown loss kind: {loss_kind}")
    if loss_kind == 'elbo' and not model.variational:
        raise ContractError("The elbo loss needs a variational model")

    model.train()
    positives = torch.as_tensor(batch, dtype=torch.long).reshape(-1, 3)
    negatives = corrupt(positives, model.n_entities, negatives_per_positive, generator)
    triples = torch.cat([positives, negatives], dim=0)
    labels = torch.cat([torch.ones(len(positives)), torch.zeros(len(negatives))]).to(model.ent_emb.dtype)

    eps = None if model.variational else 1.0
    scores = model(triples, eps=eps, generator=generator)
    loss = F.binary_cross_entropy_with_logits(scores, labels)
    if loss_kind == 'elbo':
        loss = loss + beta * model.kl(triples)

    optimizer.zero_grad()
    backward(loss)
    optimizer.step()
    return float(loss)


def train_distmult(model: DistMult, store: TripleStore, epochs: int = config.EPOCHS,
                   batch_size: int = config.BATCH_SIZE, optimizer: Optional[torch.optim.Optimizer] = None,
                   negatives_per_positive: int = config.NEGATIVES_PER_POSITIVE, loss_kind: str = 'bce',
                   beta: float = config.BETA, seed: int = config.SEED,
                   progress_bar: bool = True) -> List[float]:
    """
    Train on the store's training split.

    Returns:
        Mean loss per epoch
    """
    if optimizer is None:
        optimizer = RangerLite(model.parameters(), lr=config.DISTMULT_LR)
    generator = torch.Generator().manual_seed(seed)
    train_split = store.training_split
    if not train_split:
        raise ContractError("Training split is empty")

    losses: List[float] = []
    iterator = tqdm(range(1, epochs + 1), desc="Training DistMult") if progress_bar else range(1, epochs + 1)
    for epoch in iterator:
        order = torch.randperm(len(train_split), generator=generator).tolist()
        total = 0.0
        for start in range(0, len(order), batch_size):
            batch = [train_split[i] for i in order[start:start + batch_size]]
            total += train_step(model, batch, optimizer, negatives_per_positive, loss_kind, beta, generator) * len(batch)
        losses.append(total / len(train_split))
        logger.info(f"Epoch {epoch}: loss={losses[-1]:.4f}")
    return losses


class DistMultScorer:
    """Link-prediction adapter; variational models score with eps = 1."""

    def __init__(self, model: DistMult):
        self.model = model

    @torch.no_grad()
    def __call__(self, triples: Sequence[Triple]) -> np.ndarray:
        was_training = self.model.training
        self.model.eval()
        index = torch.as_tensor(list(triples), dtype=torch.long).reshape(-1, 3)
        scores = self.model(index, eps=1.0)
        self.model.train(was_training)
        return scores.to(torch.float64).cpu().numpy()
