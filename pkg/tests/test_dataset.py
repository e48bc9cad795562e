import os
import numpy as np
import pytest

from tempoproj.dataset import (TimeSeries, Dataset, load_ucr, save_ucr, load_multivariate,
                               save_multivariate, znormalize, znormalize_dataset, synth_generate,
                               load_dataset, describe)
from tempoproj.utils import (FormatError, ParseError, EmptyDatasetError, ShapeError, LabelError,
                             ConfigError, ParameterError)

SPEC = {'classes': [{'waveform': 'sine', 'noise_std': 0.1, 'phase_jitter': 0.05},
                    {'waveform': 'square', 'noise_std': 0.1, 'phase_jitter': 0.05},
                    {'waveform': 'trend', 'noise_std': 0.1, 'phase_jitter': 0.05}],
        'n_per_class': 100, 'length': 128}


def write(path, text):
    with open(path, 'w') as f:
        f.write(text)
    return str(path)


def test_load_ucr_minimal(tmp_path):
    ds = load_ucr(write(tmp_path / 'mini.csv', '1,0.0,1.0\n2,1.0,0.0\n'))
    assert len(ds) == 2
    assert ds.n_variables == 1
    assert ds[0].length == 2
    assert ds.labels.tolist() == [0, 1]
    assert ds.k_hint == 2


def test_load_ucr_tab_and_label_remap(tmp_path):
    ds = load_ucr(write(tmp_path / 'tab.tsv', '5\t1\t2\t3\n-1\t4\t5\t6\n5\t7\t8\t9\n'))
    assert ds.labels.tolist() == [1, 0, 1]
    assert np.array_equal(ds[1].values, [[4.0, 5.0, 6.0]])


def test_load_ucr_explicit_delimiter(tmp_path):
    ds = load_ucr(write(tmp_path / 'x.txt', '1\t0.5\t0.25\n'), delimiter='tab')
    assert ds[0].values.tolist() == [[0.5, 0.25]]
    with pytest.raises(ConfigError):
        load_ucr(str(tmp_path / 'x.txt'), delimiter='semicolon')


def test_load_ucr_ragged_names_line(tmp_path):
    with pytest.raises(FormatError, match='line 3'):
        load_ucr(write(tmp_path / 'r.csv', '1,0,1\n1,1,0\n2,1\n'))


def test_load_ucr_bad_cell(tmp_path):
    with pytest.raises(ParseError):
        load_ucr(write(tmp_path / 'p.csv', '1,0,abc\n'))


def test_load_ucr_empty_and_missing(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_ucr(write(tmp_path / 'e.csv', '\n\n'))
    with pytest.raises(FileNotFoundError):
        load_ucr(str(tmp_path / 'nope.csv'))


def test_ucr_save_load_identical(tmp_path):
    ds = synth_generate(SPEC, 3)
    path = str(tmp_path / 'out.csv')
    save_ucr(ds, path)
    back = load_ucr(path)
    assert np.array_equal(back.to_array(), ds.to_array())
    assert np.array_equal(back.labels, ds.labels)


def test_multivariate_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    samples = [TimeSeries(rng.normal(size=(4, 53 if i % 2 else 40)), i) for i in range(6)]
    ds = Dataset(tuple(samples), np.array([0, 1, 2, 0, 1, 2]), 3, 'asl')
    save_multivariate(ds, str(tmp_path / 'mv'))
    back = load_multivariate(str(tmp_path / 'mv'))
    assert len(back) == 6
    assert back.n_variables == 4
    assert back.k_hint == 3
    assert not back.equal_length
    for a, b in zip(ds, back):
        assert np.array_equal(a.values, b.values)


def test_multivariate_single_file(tmp_path):
    d = tmp_path / 'one'
    d.mkdir()
    write(d / 's.csv', '1,2,3,4,5,6,7,8\n8,7,6,5,4,3,2,1\n')
    write(d / 'labels.csv', 's.csv,walk\n')
    ds = load_multivariate(str(d))
    assert len(ds) == 1
    assert ds.n_variables == 2


def test_multivariate_variable_mismatch(tmp_path):
    d = tmp_path / 'bad'
    d.mkdir()
    write(d / 'a.csv', '1,2\n3,4\n5,6\n')
    write(d / 'b.csv', '1,2\n3,4\n5,6\n7,8\n')
    write(d / 'labels.csv', 'a.csv,0\nb.csv,1\n')
    with pytest.raises(ShapeError):
        load_multivariate(str(d))


def test_multivariate_missing_label(tmp_path):
    d = tmp_path / 'nolabel'
    d.mkdir()
    write(d / 'a.csv', '1,2\n')
    write(d / 'b.csv', '3,4\n')
    write(d / 'labels.csv', 'a.csv,0\n')
    with pytest.raises(LabelError):
        load_multivariate(str(d))


def test_znormalize_population_std():
    out = znormalize(TimeSeries([[1.0, 2.0, 3.0]]))
    assert np.allclose(out.values, [[-1.224744871391589, 0.0, 1.224744871391589]])


def test_znormalize_constant_row():
    out = znormalize(TimeSeries([[5.0, 5.0, 5.0], [1.0, 2.0, 4.0]]))
    assert np.array_equal(out.values[0], [0.0, 0.0, 0.0])
    assert abs(out.values[1].mean()) < 1e-9
    assert abs(out.values[1].std() - 1.0) < 1e-9


def test_znormalize_idempotent():
    ds = synth_generate(SPEC, 1)
    once = znormalize_dataset(ds)
    twice = znormalize_dataset(once)
    assert np.max(np.abs(once.to_array() - twice.to_array())) < 1e-9


def test_synth_generate_deterministic():
    spec = dict(SPEC, classes=[dict(c) for c in SPEC['classes']])
    a = synth_generate(spec, 7)
    b = synth_generate(spec, 7)
    assert len(a) == 300
    assert a.k_hint == 3
    assert np.array_equal(a.to_array(), b.to_array())
    assert a.content_hash() == b.content_hash()
    assert a.labels.tolist() == [0] * 100 + [1] * 100 + [2] * 100


def test_synth_generate_seed_changes_values():
    a = synth_generate(SPEC, 1)
    b = synth_generate(SPEC, 2)
    assert a.to_array().shape == b.to_array().shape
    assert not np.array_equal(a.to_array(), b.to_array())


def test_synth_generate_noiseless_class_identical():
    ds = synth_generate({'classes': [{'waveform': 'sine', 'noise_std': 0, 'phase_jitter': 0}],
                         'n_per_class': 5, 'length': 16}, 0)
    X = ds.to_array()
    assert np.all(X == X[0])


def test_synth_generate_errors():
    with pytest.raises(ConfigError):
        synth_generate({'classes': [{'waveform': 'sawtooth'}], 'n_per_class': 2, 'length': 16}, 0)
    with pytest.raises(ParameterError):
        synth_generate({'classes': [{'waveform': 'sine'}], 'n_per_class': 2, 'length': 4}, 0)
    with pytest.raises(ParameterError):
        synth_generate({'classes': [{'waveform': 'sine'}], 'n_per_class': 0, 'length': 16}, 0)


def test_timeseries_validation():
    with pytest.raises(ShapeError):
        TimeSeries([[1.0]])
    with pytest.raises(ParseError):
        TimeSeries([[1.0, np.nan]])
    ts = TimeSeries([1.0, 2.0])
    assert ts.values.shape == (1, 2)
    with pytest.raises(ValueError):
        ts.values[0, 0] = 3.0


def test_dataset_label_checks():
    samples = (TimeSeries([[0.0, 1.0]]), TimeSeries([[1.0, 0.0]]))
    with pytest.raises(LabelError):
        Dataset(samples, np.array([0, 2]))
    with pytest.raises(LabelError):
        Dataset(samples, np.array([0]))
    with pytest.raises(EmptyDatasetError):
        Dataset(())


def test_load_dataset_dispatch(tmp_path):
    import json
    path = write(tmp_path / 'gen.json', json.dumps(SPEC))
    ds = load_dataset(path, seed=7)
    assert len(ds) == 300
    assert np.array_equal(ds.to_array(), synth_generate(SPEC, 7).to_array())
    with pytest.raises(ConfigError):
        load_dataset(path, fmt='parquet')


def test_describe():
    summary = describe(synth_generate(SPEC, 0))
    assert summary['n'] == 300
    assert summary['variables'] == 1
    assert summary['min_length'] == summary['max_length'] == 128
    assert summary['class_counts'] == [100, 100, 100]
