import os, csv, json, glob
import numpy as np
import pytest

from tempoproj.cli import main, build_parser, CliConfig, pca_2d
from tempoproj.utils import ConfigError

SPEC = {'classes': [{'waveform': 'sine', 'noise_std': 0.1},
                    {'waveform': 'square', 'noise_std': 0.1},
                    {'waveform': 'trend', 'noise_std': 0.1}],
        'n_per_class': 8, 'length': 24}


@pytest.fixture
def data(tmp_path):
    path = tmp_path / 'synthetic.json'
    path.write_text(json.dumps(SPEC))
    return str(path)


def run_dir(out, command):
    found = glob.glob(os.path.join(out, command + '-*'))
    assert len(found) == 1
    return found[0]


def read_csv(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_inspect(data, capsys):
    assert main(['inspect', '--data', data]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary['n'] == 24
    assert summary['class_counts'] == [8, 8, 8]


def test_usage_errors(data, tmp_path):
    out = str(tmp_path / 'runs')
    assert main(['project', '--data', data, '--pivots', '0', '--out', out]) == 2
    assert main(['project', '--data', data, '--bogus']) == 2
    assert main(['project', '--data', data, '--metric', 'sbd', '--band', '3', '--out', out]) == 2
    assert main(['cluster', '--data', data, '--pipeline', 'pr', '--algorithm', 'kshape', '--out', out]) == 2
    assert main(['project', '--out', out]) == 2


def test_runtime_error_exit_code(tmp_path):
    assert main(['inspect', '--data', str(tmp_path / 'missing.csv')]) == 1


def test_project_reuses_cache(data, tmp_path, capsys):
    out = str(tmp_path / 'runs')
    args = ['project', '--data', data, '--metric', 'sbd', '--pivots', '4', '--seed', '7', '--out', out]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert 'N=24 p=4 W=1 metric=sbd' in first
    assert '(cached)' not in first
    assert len(os.listdir(os.path.join(out, 'cache'))) == 1
    assert main(args) == 0
    assert '(cached)' in capsys.readouterr().out


def test_cluster_outputs(data, tmp_path):
    out = str(tmp_path / 'runs')
    assert main(['cluster', '--data', data, '--pipeline', 'pr', '--algorithm', 'kmeans',
                 '--pivots', '4', '--out', out]) == 0
    directory = run_dir(out, 'cluster')
    rows = read_csv(os.path.join(directory, 'assignment.csv'))
    assert rows[0] == ['sample_id', 'cluster']
    assert len(rows) == 25
    with open(os.path.join(directory, 'report.json')) as f:
        report = json.load(f)
    assert report['config']['pipeline'] == 'pr'
    assert 0 < report['result']['accuracy'] <= 1
    with open(os.path.join(directory, 'timing.json')) as f:
        assert 'cluster' in json.load(f)['times']


def test_cluster_is_idempotent(data, tmp_path):
    out = str(tmp_path / 'runs')
    args = ['cluster', '--data', data, '--pipeline', 'os', '--algorithm', 'kmeans-dtw', '--out', out]
    assert main(args) == 0
    directory = run_dir(out, 'cluster')
    with open(os.path.join(directory, 'report.json')) as f:
        first = f.read()
    assert main(args) == 0
    with open(os.path.join(directory, 'report.json')) as f:
        assert f.read() == first


def test_train_then_plot(data, tmp_path):
    out = str(tmp_path / 'runs')
    assert main(['train', '--data', data, '--pivots', '4', '--epochs', '2', '--out', out]) == 0
    directory = run_dir(out, 'train')
    for name in ('model.tpck', 'loss_history.csv', 'latent.csv'):
        assert os.path.exists(os.path.join(directory, name))
    assert len(read_csv(os.path.join(directory, 'loss_history.csv'))) == 3
    latent = np.loadtxt(os.path.join(directory, 'latent.csv'), delimiter=',')
    assert latent.shape == (24, 10)

    latent_path = os.path.join(directory, 'latent.csv')
    assert main(['plot', '--latent', latent_path, '--out', out]) == 0
    svg = os.path.join(run_dir(out, 'plot'), 'latent.svg')
    with open(svg) as f:
        first = f.read()
    assert first.lstrip().startswith('<?xml') and '<svg' in first
    assert main(['plot', '--latent', latent_path, '--out', out]) == 0
    with open(svg) as f:
        assert f.read() == first

    checkpoint = os.path.join(directory, 'model.tpck')
    plot_out = str(tmp_path / 'plots')
    assert main(['plot', '--checkpoint', checkpoint, '--data', data, '--out', plot_out]) == 0
    assert os.path.exists(os.path.join(run_dir(plot_out, 'plot'), 'latent.svg'))


def test_plot_with_cluster_labels(data, tmp_path):
    out = str(tmp_path / 'runs')
    assert main(['cluster', '--data', data, '--pipeline', 'pr', '--pivots', '4', '--out', out]) == 0
    labels = os.path.join(run_dir(out, 'cluster'), 'assignment.csv')
    latent = tmp_path / 'z.csv'
    np.savetxt(str(latent), np.random.default_rng(0).normal(size=(24, 3)), delimiter=',')
    assert main(['plot', '--latent', str(latent), '--labels', labels, '--out', out]) == 0
    short = tmp_path / 'short.csv'
    np.savetxt(str(short), np.ones((5, 3)), delimiter=',')
    assert main(['plot', '--latent', str(short), '--labels', labels, '--out', out]) == 2


def test_plot_needs_two_columns(tmp_path):
    latent = tmp_path / 'one.csv'
    np.savetxt(str(latent), np.arange(6.0)[:, None], delimiter=',')
    assert main(['plot', '--latent', str(latent), '--out', str(tmp_path / 'runs')]) == 2
    with pytest.raises(ConfigError):
        pca_2d(np.ones((4, 1)))


def test_pca_of_2d_input_is_a_rotation():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(30, 2)) * [3.0, 0.5]
    points = pca_2d(Z)
    centered = Z - Z.mean(axis=0)
    assert np.allclose(np.linalg.norm(points, axis=1), np.linalg.norm(centered, axis=1))
    assert points[:, 0].var() >= points[:, 1].var()


def test_benchmark_outputs(data, tmp_path, capsys):
    out = str(tmp_path / 'runs')
    assert main(['benchmark', '--data', data, '--pipeline', 'os', 'pr', '--algorithm', 'kmeans', 'kshape',
                 '--pivots', '4', '--runs', '1', '--sweep-pivots', '2,4', '--out', out]) == 0
    directory = run_dir(out, 'benchmark')
    table = read_csv(os.path.join(directory, 'table.csv'))
    assert table[0] == ['pipeline', 'algorithm', 'mean', 'std']
    cells = [(r[0], r[1]) for r in table[1:]]
    assert cells == [('os', 'kmeans'), ('os', 'kshape'), ('pr', 'kmeans'), ('impr_pr', 'kmeans')]
    assert all(r[3] == '0.0' for r in table[1:4])
    sweep = read_csv(os.path.join(directory, 'sweep.csv'))
    assert [r[0] for r in sweep[1:]] == ['pr_p2', 'pr_p4']
    with open(os.path.join(directory, 'report.json')) as f:
        report = json.load(f)
    assert report['runs'] == 1
    assert len(report['results']) == 3
    assert 'impr_pr' in capsys.readouterr().out


def test_benchmark_projection_timing(data, tmp_path, capsys):
    out = str(tmp_path / 'runs')
    assert main(['benchmark', '--data', data, '--pipeline', 'os', '--algorithm', 'kmeans',
                 '--pivots', '4', '--runs', '1', '--timing', '--out', out]) == 0
    with open(os.path.join(run_dir(out, 'benchmark'), 'timing.json')) as f:
        timing = json.load(f)
    assert sorted(timing['projection']) == ['dtw', 'sbd']
    assert all(t >= 0 for t in timing['projection'].values())
    assert 'projection time: dtw' in capsys.readouterr().out


def test_cli_config_hash_ignores_output_location():
    parser = build_parser()
    a = CliConfig.from_args(parser.parse_args(['project', '--data', 'x.csv', '--out', 'a']))
    b = CliConfig.from_args(parser.parse_args(['project', '--data', 'x.csv', '--out', 'b']))
    assert a.to_dict() == b.to_dict()
    c = CliConfig.from_args(parser.parse_args(['cluster', '--data', 'x.csv', '--algorithm', 'kmeans-dtw',
                                               '--pipeline', 'os', '--no-znorm']))
    assert c.algorithms == ('kmeans_dtw',)
    assert c.znormalize is False
    assert c.pipeline_config('os', 'kmeans_dtw').normalizes() is False
