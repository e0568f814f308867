"""
Command-line entry point.

Usage:
    python -m src.cli train --dataset-dir data/fb15k-237 --model rgvae --out output/checkpoints/rgvae.bin
    python -m src.cli eval-lp --checkpoint output/checkpoints/rgvae.bin --split test --fraction 0.333
    python -m src.cli generate --checkpoint output/checkpoints/rgvae.bin --count 1000 --sigma 1
    python -m src.cli interpolate --checkpoint output/checkpoints/rgvae.bin --triple-a S R O --triple-b S R O
    python -m src.cli gradcheck
    python -m src.cli params --checkpoint output/checkpoints/rgvae.bin
"""

import argparse
import math
import logging
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import pandas as pd
import torch

import config
from src.distmult import DistMult, DistMultScorer, train_distmult
from src.eval_lp import evaluate, subset_sample, write_lp_report, write_rank_table
from src.experiments import (
    export_param_histograms,
    generate_triples,
    interpolate_between,
    interpolate_dims,
    validate_generated,
    write_generation_report,
    write_interpolation_table,
)
from src.kg_data import BoundsError, DatasetError, load_dataset_dir, load_labels, load_type_catalog
from src.rgvae import MODEL_KINDS, RGVAE, RgvaeConfig, RgvaeScorer, loss_matched, loss_standard, train_rgvae
from src.tensor_core import CheckpointFormatError, ContractError, RangerLite, check_gradients, load_checkpoint

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
DATA_ERRORS = (DatasetError, BoundsError, CheckpointFormatError, OSError)


class UsageError(Exception):
    """Raised for invalid command-line usage."""


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _checked(cast, accept, expected: str):
    """argparse ``type=`` callable that rejects values outside a range as usage errors."""
    def parse(text: str):
        try:
            value = cast(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {expected}, got {text!r}")
        if not accept(value):
            raise argparse.ArgumentTypeError(f"expected {expected}, got {text!r}")
        return value
    parse.__name__ = expected
    return parse


positive_int = _checked(int, lambda v: v >= 1, "a positive integer")
non_negative_int = _checked(int, lambda v: v >= 0, "a non-negative integer")
positive_float = _checked(float, lambda v: math.isfinite(v) and v > 0, "a positive number")
non_negative_float = _checked(float, lambda v: math.isfinite(v) and v >= 0, "a non-negative number")
unit_fraction = _checked(float, lambda v: 0 < v <= 1, "a number in (0, 1]")
dropout_rate = _checked(float, lambda v: 0 <= v < 1, "a number in [0, 1)")
step_count = _checked(int, lambda v: v >= 2, "an integer >= 2")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='rgvae', description="Relational Graph VAE toolkit")
    sub = parser.add_subparsers(dest='command', required=True)

    train = sub.add_parser('train', help="Train a model and write a checkpoint")
    train.add_argument('--dataset-dir', type=Path, required=True)
    train.add_argument('--final', action='store_true', help="Train on train+valid, evaluate on test")
    train.add_argument('--model', choices=['rgvae', 'crgvae', 'distmult', 'vdistmult'], default='rgvae')
    train.add_argument('--n', type=positive_int, default=config.N_NODES)
    train.add_argument('--d-z', type=positive_int, default=config.D_Z)
    train.add_argument('--d-h', type=positive_int, default=config.D_H)
    train.add_argument('--dropout', type=dropout_rate, default=config.DROPOUT)
    train.add_argument('--beta', type=non_negative_float, default=config.BETA)
    train.add_argument('--delta', type=non_negative_float, default=config.DELTA)
    train.add_argument('--no-perminv', action='store_true')
    train.add_argument('--no-clipgrad', action='store_true')
    train.add_argument('--match-iterations', type=positive_int, default=config.MATCH_ITERATIONS)
    train.add_argument('--d-emb', type=positive_int, default=config.DISTMULT_DIM)
    train.add_argument('--negatives', type=positive_int, default=config.NEGATIVES_PER_POSITIVE)
    train.add_argument('--loss', choices=['bce', 'elbo'], default='bce')
    train.add_argument('--lr', type=positive_float, default=None,
                       help=f"Learning rate (default {config.LEARNING_RATE} for RGVAE, {config.DISTMULT_LR} for DistMult)")
    train.add_argument('--lookahead-k', type=positive_int, default=config.LOOKAHEAD_K)
    train.add_argument('--lookahead-alpha', type=unit_fraction, default=config.LOOKAHEAD_ALPHA)
    train.add_argument('--no-gc', action='store_true', help="Disable gradient centralization")
    train.add_argument('--epochs', type=positive_int, default=config.EPOCHS)
    train.add_argument('--batch-size', type=positive_int, default=config.BATCH_SIZE)
    train.add_argument('--lp-every', type=non_negative_int, default=0)
    train.add_argument('--seed', type=int, default=config.SEED)
    train.add_argument('--out', type=Path, default=config.CHECKPOINT_DIR / 'model.bin')
    train.add_argument('--log', type=Path, default=config.REPORT_DIR / 'train_log.tsv')
    train.add_argument('--no-progress', action='store_true')

    lp = sub.add_parser('eval-lp', help="Filtered link prediction")
    lp.add_argument('--checkpoint', type=Path, required=True)
    lp.add_argument('--dataset-dir', type=Path, default=None)
    lp.add_argument('--split', choices=['valid', 'test', 'eval'], default='eval')
    lp.add_argument('--fraction', type=unit_fraction, default=config.LP_FRACTION)
    lp.add_argument('--raw', action='store_true', help="Raw instead of filtered ranking")
    lp.add_argument('--batch-size', type=positive_int, default=config.LP_CANDIDATE_BATCH)
    lp.add_argument('--workers', type=positive_int, default=config.LP_WORKERS)
    lp.add_argument('--seed', type=int, default=config.SEED)
    lp.add_argument('--report', type=Path, default=config.REPORT_DIR / 'lp_report.txt')
    lp.add_argument('--ranks', type=Path, default=config.REPORT_DIR / 'lp_ranks.tsv')
    lp.add_argument('--no-progress', action='store_true')

    gen = sub.add_parser('generate', help="Generate triples and score them against entity types")
    gen.add_argument('--checkpoint', type=Path, required=True)
    gen.add_argument('--dataset-dir', type=Path, default=None)
    gen.add_argument('--types', type=Path, default=None)
    gen.add_argument('--count', type=positive_int, default=1000)
    gen.add_argument('--sigma', type=positive_float, default=1.0)
    gen.add_argument('--key-type', default=config.KEY_TYPE)
    gen.add_argument('--match-mode', choices=['base', 'substring'], default='base')
    gen.add_argument('--seed', type=int, default=config.SEED)
    gen.add_argument('--report', type=Path, default=config.REPORT_DIR / 'generation_report.txt')
    gen.add_argument('--triples-out', type=Path, default=config.REPORT_DIR / 'generated.tsv')
    gen.add_argument('--no-progress', action='store_true')

    interp = sub.add_parser('interpolate', help="Latent interpolation between triples or along dimensions")
    interp.add_argument('--checkpoint', type=Path, required=True)
    interp.add_argument('--dataset-dir', type=Path, default=None)
    interp.add_argument('--triple-a', nargs=3, metavar=('S', 'R', 'O'), required=True)
    interp.add_argument('--triple-b', nargs=3, metavar=('S', 'R', 'O'), default=None,
                        help="Second endpoint; without it every latent dimension is swept")
    interp.add_argument('--steps', type=step_count, default=config.INTERPOLATION_STEPS)
    interp.add_argument('--labels', type=Path, default=None)
    interp.add_argument('--out', type=Path, default=config.REPORT_DIR / 'interpolation.tsv')

    grad = sub.add_parser('gradcheck', help="Finite-difference check of every differentiable component")
    grad.add_argument('--seed', type=int, default=config.SEED)

    params = sub.add_parser('params', help="Export parameter values per layer")
    params.add_argument('--checkpoint', type=Path, required=True)
    params.add_argument('--out', type=Path, default=config.REPORT_DIR / 'params.tsv')

    return parser


def _run_config(args: argparse.Namespace) -> Dict[str, object]:
    return {key: str(value) for key, value in sorted(vars(args).items()) if key != 'handler'}


def load_model(path: Union[str, Path]) -> Union[RGVAE, DistMult]:
    _, run_config = load_checkpoint(path)
    kind = run_config.get('model')
    if kind in MODEL_KINDS:
        return RGVAE.load(path)
    if kind in ('distmult', 'vdistmult'):
        return DistMult.load(path)
    raise CheckpointFormatError(f"{path}: unknown model kind {kind!r}")


def _dataset_for(args: argparse.Namespace):
    """Dataset named on the command line, else the one recorded at training time."""
    _, run_config = load_checkpoint(args.checkpoint)
    dataset_dir = args.dataset_dir or run_config.get('dataset_dir')
    if not dataset_dir:
        raise UsageError("--dataset-dir is required for checkpoints without a recorded dataset")
    final_mode = str(run_config.get('final', 'False')).lower() == 'true'
    return Path(dataset_dir), load_dataset_dir(dataset_dir, final_mode=final_mode)


def cmd_train(args: argparse.Namespace) -> int:
    store = load_dataset_dir(args.dataset_dir, final_mode=args.final)
    torch.manual_seed(args.seed)
    extra = {'dataset_dir': str(args.dataset_dir), 'final': args.final, 'seed': args.seed}
    progress = not args.no_progress

    if args.model in MODEL_KINDS:
        try:
            cfg = RgvaeConfig(
                d_e=store.d_e, d_r=store.d_r, n=args.n, d_z=args.d_z, d_h=args.d_h, dropout=args.dropout,
                beta=args.beta, delta=args.delta, perminv=not args.no_perminv,
                encoder_kind=MODEL_KINDS[args.model], clipgrad=not args.no_clipgrad,
                match_iterations=args.match_iterations,
            )
        except ValueError as e:
            raise UsageError(str(e))
        model = RGVAE(cfg, seed=args.seed)
        optimizer = RangerLite(model.parameters(), lr=args.lr or config.LEARNING_RATE,
                               lookahead_k=args.lookahead_k, lookahead_alpha=args.lookahead_alpha,
                               use_gradient_centralization=not args.no_gc)
        history = train_rgvae(model, store, epochs=args.epochs, batch_size=args.batch_size,
                              optimizer=optimizer, seed=args.seed, lp_every=args.lp_every,
                              progress_bar=progress)
        log = pd.DataFrame([vars(record) for record in history])
    else:
        if args.loss == 'elbo' and args.model != 'vdistmult':
            raise UsageError("--loss elbo needs --model vdistmult")
        model = DistMult(store.d_e, store.d_r, args.d_emb, variational=args.model == 'vdistmult', seed=args.seed)
        optimizer = RangerLite(model.parameters(), lr=args.lr or config.DISTMULT_LR,
                               lookahead_k=args.lookahead_k, lookahead_alpha=args.lookahead_alpha,
                               use_gradient_centralization=not args.no_gc)
        losses = train_distmult(model, store, epochs=args.epochs, batch_size=args.batch_size,
                                optimizer=optimizer, negatives_per_positive=args.negatives,
                                loss_kind=args.loss, beta=args.beta, seed=args.seed, progress_bar=progress)
        log = pd.DataFrame({'epoch': range(1, len(losses) + 1), 'loss': losses})

    model.save(args.out, extra)
    args.log.parent.mkdir(parents=True, exist_ok=True)
    log.to_csv(args.log, sep='\t', index=False)
    logger.info(f"Training log saved to {args.log}")
    return 0


def cmd_eval_lp(args: argparse.Namespace) -> int:
    model = load_model(args.checkpoint)
    _, store = _dataset_for(args)
    triples = subset_sample(store.split(args.split), args.fraction, args.seed)
    scorer = RgvaeScorer(model, args.batch_size) if isinstance(model, RGVAE) else DistMultScorer(model)
    report = evaluate(triples, scorer, store, filtered=not args.raw, batch_size=args.batch_size,
                      workers=args.workers, progress_bar=not args.no_progress)
    write_lp_report(report, args.report, _run_config(args))
    write_rank_table(report.records, args.ranks)
    return 0


def _require_rgvae(model) -> RGVAE:
    if not isinstance(model, RGVAE):
        raise UsageError("This command needs an RGVAE checkpoint")
    return model


def cmd_generate(args: argparse.Namespace) -> int:
    model = _require_rgvae(load_model(args.checkpoint))
    dataset_dir, store = _dataset_for(args)
    catalog = load_type_catalog(args.types or dataset_dir / config.TYPE_FILE, store)
    generator = torch.Generator().manual_seed(args.seed)
    result = generate_triples(model, args.count, args.sigma, store, generator=generator,
                              key_type=args.key_type, match_mode=args.match_mode,
                              progress_bar=not args.no_progress)
    report = validate_generated(result.triples, catalog, store, args.key_type, args.match_mode)
    values = {**_run_config(args), 'attempts': result.attempts, 'capped': result.capped}
    write_generation_report(report, args.report, values)

    args.triples_out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([store.decode(t) for t in result.triples],
                 columns=['subject', 'relation', 'object']).to_csv(args.triples_out, sep='\t', index=False)
    return 0


def cmd_interpolate(args: argparse.Namespace) -> int:
    model = _require_rgvae(load_model(args.checkpoint))
    _, store = _dataset_for(args)
    labels = load_labels(args.labels) if args.labels else None
    triple_a = store.encode(*args.triple_a)
    if args.triple_b:
        steps = interpolate_between(triple_a, store.encode(*args.triple_b), args.steps, model)
    else:
        steps = interpolate_dims(triple_a, args.steps, model)
    write_interpolation_table(steps, store, args.out, labels)
    return 0


def run_gradient_suite(seed: int = config.SEED) -> Dict[str, float]:
    """Max relative finite-difference error of each differentiable component."""
    generator = torch.Generator().manual_seed(seed)

    def rand(*shape):
        return torch.randn(*shape, generator=generator, dtype=torch.float64)

    results: Dict[str, float] = {}
    W, x = rand(3, 4), rand(4)
    results['sigmoid_matmul'] = check_gradients(lambda w: torch.sigmoid(w @ x).sum(), W)
    results['softmax_log'] = check_gradients(lambda v: (torch.log(torch.softmax(v, -1)) * x).sum(), rand(4))
    results['relu_mean'] = check_gradients(lambda v: torch.relu(v @ W.t()).pow(2).mean(), rand(2, 4) + 0.1)

    for kind in ('mlp', 'gcn'):
        cfg = RgvaeConfig(d_e=4, d_r=2, d_z=3, d_h=5, dropout=0.0, encoder_kind=kind)
        model = RGVAE(cfg, seed=seed, gain=1.0).double()
        graphs = model.graphs_for([(0, 1, 2), (3, 0, 3)])
        eps = rand(2, cfg.d_z)
        names = [name for name, _ in model.named_parameters()]
        params = [p for _, p in model.named_parameters()]

        def elbo(*values, use_matched=False):
            logits, latent = torch.func.functional_call(model, dict(zip(names, values)), (graphs,), {'eps': eps})
            if use_matched:
                X = torch.eye(cfg.n, dtype=torch.float64).expand(2, cfg.n, cfg.n)
                return loss_matched(graphs, logits, latent, beta=1.0, delta=0.1, permutation=X)
            return loss_standard(graphs, logits, latent, beta=1.0, delta=0.1)

        results[f'{kind}_loss_standard'] = check_gradients(elbo, *params)
        results[f'{kind}_loss_matched'] = check_gradients(lambda *v: elbo(*v, use_matched=True), *params)

    dm = DistMult(5, 2, 3, variational=True, seed=seed).double()
    index = torch.tensor([[0, 1, 2], [4, 0, 3]])
    results['vdistmult_score'] = check_gradients(
        lambda ent, rel, ent_lv, rel_lv: torch.func.functional_call(
            dm, {'ent_emb': ent, 'rel_emb': rel, 'ent_emb_logvar': ent_lv, 'rel_emb_logvar': rel_lv},
            (index,)).sum(),
        dm.ent_emb, dm.rel_emb, dm.ent_emb_logvar, dm.rel_emb_logvar)
    return results


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradient_suite(args.seed)
    failed = [name for name, error in results.items() if not error < GRADCHECK_TOLERANCE]
    for name, error in results.items():
        print(f"{name}\t{error:.3e}\t{'FAIL' if name in failed else 'ok'}")
    if failed:
        logger.error(f"Gradient check failed for: {', '.join(failed)}")
        return 2
    return 0


def cmd_params(args: argparse.Namespace) -> int:
    export_param_histograms(args.checkpoint, args.out)
    return 0


HANDLERS = {
    'train': cmd_train,
    'eval-lp': cmd_eval_lp,
    'generate': cmd_generate,
    'interpolate': cmd_interpolate,
    'gradcheck': cmd_gradcheck,
    'params': cmd_params,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Execute one command.

    Returns:
        0 on success, 1 on usage error, 2 on data error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return HANDLERS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        return int(e.code or 0)
    except DATA_ERRORS as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2
    except ContractError as e:
        logger.error(f"Invalid arguments for this run: {e}")
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == '__main__':
    main()
