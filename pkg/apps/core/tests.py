# apps/core/tests.py
import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from apps.core.exceptions import MidtError
from apps.core.reporting import provenance, read_csv_report, write_csv_report, write_json_report
from apps.core.rng import derive_seed, make_rng


class TestRng:
    def test_same_path_same_stream(self):
        np.testing.assert_array_equal(make_rng(5, 1, 2).normal(size=8), make_rng(5, 1, 2).normal(size=8))

    def test_paths_are_independent(self):
        assert not np.array_equal(make_rng(5, 1).normal(size=8), make_rng(5, 2).normal(size=8))
        assert not np.array_equal(make_rng(5).normal(size=8), make_rng(5, 0).normal(size=8))

    def test_derive_seed(self):
        seed = derive_seed(5, 3)
        assert seed == derive_seed(5, 3)
        assert seed != derive_seed(5, 4)
        assert 0 <= seed < 2 ** 63


class TestReporting:
    @pytest.fixture
    def prov(self):
        return provenance('ab' * 32, 7)

    def test_provenance_fields(self, prov):
        assert prov == {'config_hash': 'ab' * 32, 'seed': 7, 'metric_definitions': 'midt-metrics/1'}

    def test_csv_header_and_readback(self, tmp_path, prov):
        frame = pd.DataFrame({'record': [0, 1], 'rmse': [0.1, 1 / 3]})
        path = write_csv_report(frame, tmp_path / 'nested' / 'table.csv', prov)
        lines = path.read_text().splitlines()
        assert lines[:3] == [
            f"# config_hash={'ab' * 32}", '# metric_definitions=midt-metrics/1', '# seed=7',
        ]
        assert lines[3] == 'record,rmse'
        assert lines[5] == '1,0.3333333333'
        pd.testing.assert_frame_equal(read_csv_report(path), frame, atol=1e-10)

    def test_csv_is_byte_stable(self, tmp_path, prov):
        frame = pd.DataFrame(np.random.default_rng(0).normal(size=(5, 3)), columns=list('abc'))
        first = write_csv_report(frame, tmp_path / 'a.csv', prov).read_bytes()
        second = write_csv_report(frame.copy(), tmp_path / 'b.csv', prov).read_bytes()
        assert first == second
        assert b'\r' not in first

    def test_json_with_numpy_values(self, tmp_path, prov):
        path = write_json_report({'z': np.float64(0.5), 'a': np.arange(3)}, tmp_path / 'summary.json', prov)
        document = json.loads(path.read_text())
        assert document == {'a': [0, 1, 2], 'z': 0.5, 'provenance': prov}
        assert list(document) == ['a', 'provenance', 'z']


def test_error_context():
    exc = MidtError('bad value', step=3)
    assert str(exc) == 'bad value'
    assert exc.context == {'step': 3}


def test_module_headers_name_their_file():
    root = Path(__file__).resolve().parents[2]
    for path in sorted((root / 'apps').rglob('*.py')):
        lines = path.read_text().splitlines()
        header = f'# {path.relative_to(root).as_posix()}'
        if lines and lines[0].startswith('# apps/'):
            assert lines[0] == header, path
            assert lines[1:2] != [header], path
