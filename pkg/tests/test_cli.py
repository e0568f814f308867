import pytest

from src.cli import GRADCHECK_TOLERANCE, build_parser, run, run_gradient_suite
from src.eval_lp import read_key_values


@pytest.fixture
def checkpoint(tmp_path, dataset_dir):
    path = tmp_path / "rgvae.bin"
    code = run(['train', '--dataset-dir', str(dataset_dir), '--d-z', '4', '--d-h', '8', '--epochs', '2',
                '--batch-size', '2', '--out', str(path), '--log', str(tmp_path / 'train_log.tsv'),
                '--no-progress'])
    assert code == 0
    return path


def test_parser_defaults():
    args = build_parser().parse_args(['eval-lp', '--checkpoint', 'model.bin'])
    assert args.split == 'eval'
    assert args.fraction == 1.0
    assert not args.raw


def test_usage_errors_exit_with_one():
    assert run(['train']) == 1
    assert run(['no-such-command']) == 1
    assert run(['train', '--dataset-dir', 'kg', '--model', 'transe']) == 1


def test_data_errors_exit_with_two(tmp_path):
    assert run(['eval-lp', '--checkpoint', str(tmp_path / 'missing.bin')]) == 2
    assert run(['train', '--dataset-dir', str(tmp_path / 'missing'), '--epochs', '1', '--no-progress']) == 2


def test_train_writes_checkpoint_and_log(checkpoint, tmp_path):
    assert checkpoint.exists()
    log = (tmp_path / 'train_log.tsv').read_text(encoding='utf-8').splitlines()
    assert log[0].split('\t')[:3] == ['epoch', 'elbo', 'recon']
    assert len(log) == 3


def _run_twice(argv, *outputs):
    """Run the same command twice and return the bytes each run left in ``outputs``."""
    contents = []
    for _ in range(2):
        assert run(argv) == 0
        contents.append([path.read_bytes() for path in outputs])
    return contents


def test_eval_lp_is_deterministic(checkpoint, tmp_path):
    report, ranks = tmp_path / 'lp.txt', tmp_path / 'ranks.tsv'
    first, second = _run_twice(['eval-lp', '--checkpoint', str(checkpoint), '--report', str(report),
                                '--ranks', str(ranks), '--workers', '4', '--no-progress'], report, ranks)
    assert first == second
    values = read_key_values(report)
    assert 0.0 < float(values['mrr']) <= 1.0
    assert values['config.split'] == 'eval'


def test_generate_is_deterministic(checkpoint, tmp_path):
    report, triples = tmp_path / 'generation.txt', tmp_path / 'generated.tsv'
    first, second = _run_twice(['generate', '--checkpoint', str(checkpoint), '--count', '8', '--report',
                                str(report), '--triples-out', str(triples), '--no-progress'], report, triples)
    assert first == second


def test_train_log_is_deterministic(tmp_path, dataset_dir):
    log = tmp_path / 'train_log.tsv'
    first, second = _run_twice(['train', '--dataset-dir', str(dataset_dir), '--d-z', '4', '--d-h', '8',
                                '--epochs', '2', '--batch-size', '2', '--out', str(tmp_path / 'rgvae.bin'),
                                '--log', str(log), '--no-progress'], log)
    assert first == second


@pytest.mark.parametrize("flags", [
    ['--d-z', '0'],
    ['--d-h', '-3'],
    ['--dropout', '1.0'],
    ['--lr', '-1'],
    ['--lr', 'nan'],
    ['--beta', '-0.5'],
    ['--lookahead-alpha', '0'],
    ['--epochs', 'two'],
])
def test_train_rejects_out_of_range_flags(flags, tmp_path, dataset_dir):
    argv = ['train', '--dataset-dir', str(dataset_dir), '--epochs', '1', '--out', str(tmp_path / 'm.bin'),
            '--log', str(tmp_path / 'log.tsv'), '--no-progress']
    # Later flags win in argparse
    assert run(argv + flags) == 1
    assert not (tmp_path / 'm.bin').exists()


def test_experiment_commands_reject_out_of_range_flags(checkpoint, tmp_path):
    lp = ['eval-lp', '--checkpoint', str(checkpoint), '--report', str(tmp_path / 'lp.txt'),
          '--ranks', str(tmp_path / 'ranks.tsv'), '--no-progress']
    assert run(lp + ['--fraction', '0']) == 1
    assert run(lp + ['--fraction', '1.5']) == 1
    assert run(lp + ['--workers', '0']) == 1
    # One evaluation triple, so a 1% subset is empty
    assert run(lp + ['--fraction', '0.01']) == 1
    assert not (tmp_path / 'lp.txt').exists()

    gen = ['generate', '--checkpoint', str(checkpoint), '--report', str(tmp_path / 'gen.txt'),
           '--triples-out', str(tmp_path / 'gen.tsv'), '--no-progress']
    assert run(gen + ['--sigma', '0']) == 1
    assert run(gen + ['--count', '0']) == 1

    assert run(['interpolate', '--checkpoint', str(checkpoint), '--triple-a', '/m/a', '/people/person/friend',
                '/m/b', '--steps', '1', '--out', str(tmp_path / 'interp.tsv')]) == 1


def test_generate_interpolate_params(checkpoint, tmp_path):
    report = tmp_path / 'generation.txt'
    assert run(['generate', '--checkpoint', str(checkpoint), '--count', '5', '--report', str(report),
                '--triples-out', str(tmp_path / 'generated.tsv'), '--no-progress']) == 0
    values = read_key_values(report)
    assert int(values['valid']) <= int(values['kept'])

    interpolation = tmp_path / 'interpolation.tsv'
    assert run(['interpolate', '--checkpoint', str(checkpoint), '--triple-a', '/m/a', '/people/person/friend',
                '/m/b', '--triple-b', '/m/c', '/location/location/contains', '/m/a', '--steps', '3',
                '--out', str(interpolation)]) == 0
    assert interpolation.exists()

    assert run(['interpolate', '--checkpoint', str(checkpoint), '--triple-a', '/m/zz', '/people/person/friend',
                '/m/b', '--out', str(interpolation)]) == 2

    params = tmp_path / 'params.tsv'
    assert run(['params', '--checkpoint', str(checkpoint), '--out', str(params)]) == 0
    assert params.read_text(encoding='utf-8').startswith('layer\tkind\tindex\tvalue')


def test_distmult_training(tmp_path, dataset_dir):
    path = tmp_path / 'distmult.bin'
    base = ['train', '--dataset-dir', str(dataset_dir), '--d-emb', '4', '--epochs', '1', '--out', str(path),
            '--log', str(tmp_path / 'log.tsv'), '--no-progress']
    assert run(base + ['--model', 'distmult', '--loss', 'elbo']) == 1
    assert run(base + ['--model', 'vdistmult', '--loss', 'elbo']) == 0
    assert run(['eval-lp', '--checkpoint', str(path), '--report', str(tmp_path / 'lp.txt'),
                '--ranks', str(tmp_path / 'ranks.tsv'), '--no-progress']) == 0
    # Latent experiments need an RGVAE
    assert run(['generate', '--checkpoint', str(path), '--report', str(tmp_path / 'gen.txt'),
                '--triples-out', str(tmp_path / 'gen.tsv'), '--no-progress']) == 1


def test_gradient_suite_passes():
    results = run_gradient_suite(seed=0)
    assert {'sigmoid_matmul', 'mlp_loss_matched', 'gcn_loss_standard', 'vdistmult_score'} <= set(results)
    assert all(error < GRADCHECK_TOLERANCE for error in results.values())
