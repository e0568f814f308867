"""
Latent-space experiments: interpolation between triples, per-dimension
traversal, free generation scored against entity types, and parameter
value export.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

import config
from src.eval_lp import write_key_values
from src.kg_data import Triple, TripleStore, TypeCatalog, graphs_to_triples
from src.rgvae import RGVAE, sample_discrete
from src.tensor_core import ContractError, load_checkpoint

logger = logging.getLogger(__name__)


@dataclass
class InterpolationStep:
    """One decoded point; ``dimension`` is None for interpolation between two triples."""

    step: int
    dimension: Optional[int]
    z: torch.Tensor
    triples: List[Triple]


@dataclass
class GenerationResult:
    triples: List[Triple]
    kept: int
    attempts: int
    capped: bool


@dataclass
class GenerationReport:
    total: int
    kept: int
    valid: int
    novel: int
    baseline: float
    key_type: str = config.KEY_TYPE
    match_mode: str = 'base'
    novel_triples: List[Triple] = field(default_factory=list, repr=False)

    @property
    def valid_rate(self) -> float:
        return self.valid / self.kept if self.kept else 0.0

    def to_dict(self) -> Dict[str, object]:
        return {
            'total': self.total,
            'kept': self.kept,
            'valid': self.valid,
            'novel': self.novel,
            'valid_rate': f"{self.valid_rate:.6f}",
            'baseline': f"{self.baseline:.6f}",
            'key_type': self.key_type,
            'match_mode': self.match_mode,
        }


@torch.no_grad()
def _decode_triples(model: RGVAE, z: torch.Tensor) -> List[List[Triple]]:
    logits = model.decode(z)
    return graphs_to_triples(sample_discrete(logits, deterministic=True), per_graph=True)


@torch.no_grad()
def _mean_latent(model: RGVAE, triples: Sequence[Triple]) -> torch.Tensor:
    model.eval()
    return model.encode_mean(model.graphs_for(list(triples))).z


def interpolate_between(triple_a: Triple, triple_b: Triple, steps: int, model: RGVAE) -> List[InterpolationStep]:
    """Decode evenly spaced points on the segment between the two mean latents."""
    if steps < 2:
        raise ContractError(f"steps must be >= 2, got {steps}")
    z = _mean_latent(model, [triple_a, triple_b])
    z_a, z_b = z[0], z[1]
    weights = torch.arange(steps, dtype=z.dtype) / (steps - 1)
    path = z_a[None, :] + weights[:, None] * (z_b - z_a)[None, :]
    decoded = _decode_triples(model, path)
    return [InterpolationStep(step=j, dimension=None, z=path[j], triples=decoded[j]) for j in range(steps)]


def interpolate_dims(anchor: Triple, steps: int, model: RGVAE,
                     bound: float = config.CONFIDENCE_BOUND) -> List[InterpolationStep]:
    """
    Sweep each latent dimension over [-bound, bound] from the anchor's mean latent.

    Returns:
        d_z × steps entries, ordered by dimension then step
    """
    if steps < 2:
        raise ContractError(f"steps must be >= 2, got {steps}")
    anchor_z = _mean_latent(model, [anchor])[0]
    d_z = anchor_z.shape[0]
    values = -bound + torch.arange(steps, dtype=anchor_z.dtype) * (2 * bound / (steps - 1))

    grid = anchor_z.repeat(d_z * steps, 1)
    for i in range(d_z):
        grid[i * steps:(i + 1) * steps, i] = values
    decoded = _decode_triples(model, grid)

    return [InterpolationStep(step=j, dimension=i, z=grid[i * steps + j], triples=decoded[i * steps + j])
            for i in range(d_z) for j in range(steps)]


def relation_matches(relation: str, key_type: str, match_mode: str = 'base') -> bool:
    if match_mode == 'base':
        return TypeCatalog.base_type(relation) == key_type
    if match_mode == 'substring':
        return key_type in relation
    raise ValueError(f"Unknown match mode: {match_mode}")


def generate_triples(model: RGVAE, count_target: int, sigma: float, store: TripleStore,
                     generator: Optional[torch.Generator] = None, key_type: str = config.KEY_TYPE,
                     match_mode: str = 'base', batch_size: int = config.GENERATION_BATCH,
                     attempt_factor: int = config.GENERATION_ATTEMPT_FACTOR,
                     progress_bar: bool = True) -> GenerationResult:
    """
    Decode z ~ N(0, sigma²·I) until ``count_target`` triples pass the relation filter.

    Args:
        model: Trained or untrained RGVAE
        count_target: Triples passing the relation filter to collect
        sigma: Standard deviation of the latent draws
        store: Vocabulary for the relation filter
        generator: Seeded torch generator
        attempt_factor: Latent draws are capped at attempt_factor · count_target

    Returns:
        GenerationResult with every raw triple produced
    """
    if sigma <= 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    key_relations = {r for r, name in enumerate(store.relations) if relation_matches(name, key_type, match_mode)}
    max_attempts = attempt_factor * count_target
    model.eval()

    triples: List[Triple] = []
    kept = attempts = 0
    pbar = tqdm(total=count_target, desc="Generating") if progress_bar else None
    while kept < count_target and attempts < max_attempts:
        size = min(batch_size, max_attempts - attempts)
        z = sigma * torch.randn(size, model.cfg.d_z, generator=generator, dtype=model.decoder.fc1.weight.dtype)
        with torch.no_grad():
            graphs = sample_discrete(model.decode(z), generator=generator)
        for graph_triples in graphs_to_triples(graphs, per_graph=True):
            triples.extend(graph_triples)
            passed = sum(1 for _, r, _ in graph_triples if r in key_relations)
            kept += passed
            if pbar is not None:
                pbar.update(passed)
        attempts += size
    if pbar is not None:
        pbar.close()

    capped = kept < count_target
    if capped:
        logger.warning(f"Generation stopped at the cap of {max_attempts} draws with {kept}/{count_target} kept triples")
    logger.info(f"Generated {len(triples)} triples from {attempts} latent draws, {kept} pass the relation filter")
    return GenerationResult(triples=triples, kept=kept, attempts=attempts, capped=capped)


def validate_generated(triples: Sequence[Triple], catalog: TypeCatalog, store: TripleStore,
                       key_type: str = config.KEY_TYPE, match_mode: str = 'base') -> GenerationReport:
    """
    Count triples passing the relation filter, those whose head carries the
    key type, and those among them absent from every split.
    """
    known = store.all_triples()
    kept = valid = 0
    novel: List[Triple] = []
    for triple in triples:
        s, r, _ = triple
        if not relation_matches(store.relations[r], key_type, match_mode):
            continue
        kept += 1
        if not catalog.has_type(s, key_type, match_mode):
            continue
        valid += 1
        if tuple(triple) not in known:
            novel.append(tuple(triple))

    report = GenerationReport(
        total=len(triples),
        kept=kept,
        valid=valid,
        novel=len(novel),
        baseline=catalog.baseline(key_type, match_mode),
        key_type=key_type,
        match_mode=match_mode,
        novel_triples=novel,
    )
    logger.info(f"Generation report: kept={report.kept} valid={report.valid} novel={report.novel} "
                f"valid_rate={report.valid_rate:.4f} baseline={report.baseline:.4f}")
    return report


def export_param_histograms(checkpoint: Union[str, Path], out_path: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """
    Flatten every tensor in a checkpoint into (layer, kind, index, value) rows.

    Rank-1 tensors are reported as biases, everything else as weights.
    """
    tensors, _ = load_checkpoint(checkpoint)
    frames = []
    for name, tensor in tensors.items():
        values = tensor.reshape(-1).numpy().astype(np.float64)
        layer = name.rsplit('.', 1)[0] if name.endswith(('.weight', '.bias')) else name
        frames.append(pd.DataFrame({
            'layer': layer,
            'kind': 'bias' if tensor.dim() == 1 else 'weight',
            'index': np.arange(len(values)),
            'value': values,
        }))
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=['layer', 'kind', 'index', 'value'])

    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(out_path, sep='\t', index=False)
        logger.info(f"Parameter table with {len(tensors)} tensors saved to {out_path}")
    return df


def _names(triple: Triple, store: TripleStore, labels: Optional[Dict[str, str]]):
    names = store.decode(triple)
    if labels:
        return tuple(labels.get(name, name) for name in names)
    return names


def write_interpolation_table(steps: Sequence[InterpolationStep], store: TripleStore, path: Union[str, Path],
                              labels: Optional[Dict[str, str]] = None) -> pd.DataFrame:
    """TSV with one row per decoded triple; steps decoding no edge get an empty row."""
    rows = []
    for item in steps:
        dimension = '' if item.dimension is None else item.dimension
        if not item.triples:
            rows.append((item.step, dimension, '', '', ''))
        for triple in item.triples:
            rows.append((item.step, dimension, *_names(triple, store, labels)))
    df = pd.DataFrame(rows, columns=['step', 'dimension', 'subject', 'relation', 'object'])

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, sep='\t', index=False)
    logger.info(f"Interpolation table saved to {path}")
    return df


def write_generation_report(report: GenerationReport, path: Union[str, Path],
                            run_config: Optional[Dict[str, object]] = None) -> None:
    write_key_values(report.to_dict(), path, run_config)
    logger.info(f"Generation report saved to {path}")
