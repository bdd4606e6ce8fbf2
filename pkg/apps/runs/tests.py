# apps/runs/tests.py
import json
from datetime import timedelta
from pathlib import Path
from unittest import mock

import numpy as np
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from django.db import OperationalError

from apps.core.reporting import read_csv_report
from apps.core.rng import derive_seed
from apps.denoiser.network import NetConfig
from apps.diffusion.exceptions import NonFiniteLossError
from apps.diffusion.model import DiffusionModel
from apps.runs.checkpoints import checkpoint_paths, load_checkpoint, load_model, quantize_store, save_model
from apps.runs.config import SEEDED_SECTIONS, RunConfig
from apps.runs.exceptions import CheckpointError, ConfigValidationError, MissingArtifactError
from apps.runs.factories import RunArtifactFactory, RunFactory
from apps.runs.ledger import file_sha256
from apps.runs.models import Run
from apps.runs.services import PipelineService, exit_code_for
from apps.signals.exceptions import TruncatedPayloadError
from apps.signals.records import quantize_float32
from apps.signals.storage import read_dataset

CONFIGS = Path(__file__).resolve().parents[2] / 'configs'
SMOKE = CONFIGS / 'smoke.json'
SMALL_NET = NetConfig(channels=2, hidden=8, n_blocks=2, dilations=(1, 2), step_embedding_dim=8)


def write_config(path, raw):
    path.write_text(json.dumps(raw))
    return path


def run_quietly(command, run_dir, **options):
    with mock.patch('apps.runs.services.RunLedger'):
        return PipelineService.run(command, SMOKE, out=run_dir, **options)


@pytest.fixture(scope='module')
def smoke_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp('smoke')
    for command in ('gen-data', 'train', 'sample', 'eval', 'privacy', 'report'):
        run_quietly(command, run_dir)
    return run_dir


class TestRunConfig:
    def test_unknown_key_reports_key_path(self):
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.from_dict({'seed': 1, 'train': {'bta': 0.1}})
        assert excinfo.value.key_path == 'train.bta'

    def test_nested_unknown_key(self):
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.from_dict({'seed': 1, 'train': {'midt': {'windowz': [16, 32]}}})
        assert excinfo.value.key_path == 'train.midt.windowz'

    def test_unknown_section(self):
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.from_dict({'seed': 1, 'optimizer': {}})
        assert excinfo.value.key_path == 'optimizer'

    def test_missing_seed(self):
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.from_dict({})
        assert excinfo.value.key_path == 'seed'

    def test_missing_sections_get_defaults(self):
        config = RunConfig.from_dict({'seed': 3})
        assert config.section('net')['hidden'] == 32
        assert config.section('split')['test_fold'] == 10
        assert [g['name'] for g in config.section('downstream')['generators']] == ['midt', 'baseline']
        for index, section in enumerate(SEEDED_SECTIONS, start=1):
            assert config.section(section)['seed'] == derive_seed(3, index)

    def test_explicit_section_seed_is_kept(self):
        config = RunConfig.from_dict({'seed': 3, 'net': {'seed': 5}})
        assert config.section('net')['seed'] == 5

    def test_derived_section_seed_is_logged(self):
        raw = {'seed': 3, **{section: {'seed': 11} for section in SEEDED_SECTIONS if section != 'sample'}}
        with mock.patch('apps.runs.config.logger') as logger:
            RunConfig.from_dict(raw)
        assert logger.info.call_count == 1
        assert 'sample.seed' in logger.info.call_args.args[0]

    def test_seed_override_rederives_every_section(self):
        config = RunConfig.from_dict({'seed': 3, 'net': {'seed': 5}}, seed=9)
        assert config.seed == 9
        assert config.section('net')['seed'] == derive_seed(9, SEEDED_SECTIONS.index('net') + 1)

    def test_hash_ignores_paths(self):
        a = RunConfig.from_dict({'seed': 3, 'paths': {'runs_dir': '/tmp/a'}})
        b = RunConfig.from_dict({'seed': 3, 'paths': {'runs_dir': '/tmp/b'}})
        c = RunConfig.from_dict({'seed': 3, 'train': {'steps': 7}})
        assert a.config_hash == b.config_hash
        assert a.config_hash != c.config_hash

    def test_run_dir_from_hash(self, tmp_path):
        config = RunConfig.from_dict({'seed': 3, 'paths': {'runs_dir': str(tmp_path)}})
        assert config.run_dir() == tmp_path / config.config_hash[:12]
        assert config.run_dir(tmp_path / 'x') == tmp_path / 'x'

    def test_overlapping_split(self):
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.from_dict({'seed': 1, 'split': {'train_folds': [1, 10]}})
        assert excinfo.value.key_path == 'split.train_folds'

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.from_dict({'seed': 1, 'net': {'kernel_size': 4}})
        assert excinfo.value.key_path == 'net.kernel_size'

    @pytest.mark.parametrize('generators', [
        [{'name': 'midt'}, {'name': 'midt'}],
        [{'name': 'real_only'}],
    ])
    def test_bad_generators(self, generators):
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.from_dict({'seed': 1, 'downstream': {'generators': generators}})
        assert excinfo.value.key_path.startswith('downstream.generators')

    def test_unknown_mask_group(self):
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.from_dict({'seed': 1, 'train': {'mask': ['age', 'height']}})
        assert excinfo.value.key_path == 'train.mask'

    def test_load_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            RunConfig.load(tmp_path / 'absent.json')
        broken = tmp_path / 'broken.json'
        broken.write_text('{"seed": ')
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.load(broken)
        assert excinfo.value.key_path == '<root>'

    @pytest.mark.parametrize('name', ['default.json', 'smoke.json'])
    def test_shipped_configs_validate(self, name):
        raw = json.loads((CONFIGS / name).read_text())
        config = RunConfig.load(CONFIGS / name)
        for section in SEEDED_SECTIONS:
            assert isinstance(raw[section]['seed'], int), section
            assert config.section(section)['seed'] == raw[section]['seed']
        train = config.train_config()
        assert train.midt.resolutions
        config.fold_mix_plan().validate()

    def test_window_longer_than_oracle_length(self):
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.from_dict({'seed': 1, 'oracle': {'length': 64}, 'train': {'midt': {'windows': [32, 128]}}})
        assert excinfo.value.key_path == 'train.midt.windows'
        assert '128' in str(excinfo.value)

    def test_ssim_window_longer_than_oracle_length(self):
        with pytest.raises(ConfigValidationError) as excinfo:
            RunConfig.from_dict({
                'seed': 1, 'oracle': {'length': 64},
                'train': {'midt': {'windows': [16, 32]}}, 'metrics': {'ssim_window': 128},
            })
        assert excinfo.value.key_path == 'metrics.ssim_window'

    def test_external_dataset_defers_length_check(self, tmp_path):
        config = RunConfig.from_dict({
            'seed': 1, 'oracle': {'length': 64}, 'train': {'midt': {'windows': [32, 128]}},
            'paths': {'dataset': str(tmp_path / 'records.json')},
        })
        assert [r.window_length for r in config.train_config().midt.resolutions] == [32, 128]

    def test_generator_overrides(self):
        config = RunConfig.from_dict({'seed': 1})
        cfg = config.train_config(midt_weight=0.0, mask='baseline')
        assert cfg.midt_weight == 0.0
        assert cfg.mask == 'baseline'
        assert config.train_config().midt_weight == 0.1


class TestCheckpoints:
    @pytest.fixture
    def model(self):
        return DiffusionModel.initialize(SMALL_NET, 64, seed=0, mask='baseline')

    def test_roundtrip_equals_quantized_store(self, tmp_path, model):
        save_model(model, tmp_path / 'model', 'abc')
        loaded = load_model(tmp_path / 'model', 'abc')
        assert loaded.net == model.net
        assert loaded.length == 64
        assert tuple(loaded.mask) == tuple(model.mask)
        for name, value in model.store.items():
            np.testing.assert_array_equal(loaded.store[name], quantize_float32(value))

    def test_quantized_store_survives_bit_for_bit(self, tmp_path, model):
        store = quantize_store(model.store)
        save_model(DiffusionModel(store, model.net, 64, model.schema), tmp_path / 'q', 'abc')
        loaded, _ = load_checkpoint(tmp_path / 'q', 'abc')
        for name, value in store.items():
            assert loaded[name].tobytes() == value.tobytes()

    def test_truncated_blob(self, tmp_path, model):
        _, blob = save_model(model, tmp_path / 'model', 'abc')
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(CheckpointError, match='payload length mismatch'):
            load_checkpoint(blob)

    def test_inconsistent_shape_names_parameter(self, tmp_path, model):
        manifest_path, _ = save_model(model, tmp_path / 'model', 'abc')
        manifest = json.loads(manifest_path.read_text())
        entry = next(e for e in manifest['parameters'] if e['name'] == 'net.out_proj.weight')
        entry['shape'] = [1, 2]
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError, match='net.out_proj.weight') as excinfo:
            load_checkpoint(manifest_path)
        assert excinfo.value.parameter == 'net.out_proj.weight'

    def test_transposed_shape_rejected_by_network(self, tmp_path, model):
        manifest_path, _ = save_model(model, tmp_path / 'model', 'abc')
        manifest = json.loads(manifest_path.read_text())
        entry = next(e for e in manifest['parameters'] if e['name'] == 'net.out_proj.weight')
        entry['shape'] = entry['shape'][::-1]
        manifest_path.write_text(json.dumps(manifest))
        load_checkpoint(manifest_path)
        with pytest.raises(CheckpointError) as excinfo:
            load_model(manifest_path)
        assert excinfo.value.parameter == 'net.out_proj.weight'

    def test_config_hash_mismatch(self, tmp_path, model):
        save_model(model, tmp_path / 'model', 'abc')
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / 'model', 'def')

    def test_missing_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / 'nothing')

    def test_paths_accept_either_file(self, tmp_path):
        assert checkpoint_paths(tmp_path / 'm.bin') == checkpoint_paths(tmp_path / 'm')


@pytest.mark.parametrize('exc, code', [
    (ConfigValidationError('train.bta', 'Unknown field.'), 2),
    (MissingArtifactError('data/dataset.json', 'gen-data'), 2),
    (CheckpointError('payload length mismatch'), 2),
    (TruncatedPayloadError(12, 8), 2),
    (FileNotFoundError('config.json'), 2),
    (NonFiniteLossError(4, float('nan')), 3),
    (ValueError('boom'), 1),
])
def test_exit_code_for(exc, code):
    assert exit_code_for(exc) == code


@pytest.mark.django_db
class TestMidtCommand:
    def test_unknown_config_key_exits_2(self, tmp_path):
        config = write_config(tmp_path / 'bad.json', {'seed': 1, 'train': {'bta': 0.1}})
        with pytest.raises(CommandError, match='train.bta') as excinfo:
            call_command('midt', 'gen-data', config=str(config), out=str(tmp_path / 'run'))
        assert excinfo.value.returncode == 2

    def test_missing_config_exits_2(self, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            call_command('midt', 'gen-data', config=str(tmp_path / 'absent.json'))
        assert excinfo.value.returncode == 2

    def test_window_longer_than_records_exits_2(self, tmp_path):
        raw = {'seed': 1, 'oracle': {'length': 64}, 'train': {'midt': {'windows': [32, 128]}}}
        config = write_config(tmp_path / 'long.json', raw)
        with pytest.raises(CommandError, match='train.midt.windows') as excinfo:
            call_command('midt', 'gen-data', config=str(config), out=str(tmp_path / 'run'))
        assert excinfo.value.returncode == 2
        assert not (tmp_path / 'run').exists()

    def test_window_longer_than_external_dataset_exits_2(self, tmp_path):
        call_command('midt', 'gen-data', config=str(SMOKE), out=str(tmp_path / 'source'))
        raw = json.loads(SMOKE.read_text())
        raw['train']['midt']['windows'] = [32, 128]
        raw['paths'] = {'dataset': str(tmp_path / 'source' / 'data' / 'dataset.json')}
        config = write_config(tmp_path / 'external.json', raw)
        call_command('midt', 'gen-data', config=str(config), out=str(tmp_path / 'run'))
        with pytest.raises(CommandError, match='train.midt.windows') as excinfo:
            call_command('midt', 'train', config=str(config), out=str(tmp_path / 'run'))
        assert excinfo.value.returncode == 2
        assert not (tmp_path / 'run' / 'checkpoints').exists()

    def test_missing_prerequisite_exits_2(self, tmp_path):
        with pytest.raises(CommandError, match="run 'gen-data' first") as excinfo:
            call_command('midt', 'train', config=str(SMOKE), out=str(tmp_path))
        assert excinfo.value.returncode == 2

    def test_non_finite_loss_exits_3(self, tmp_path):
        call_command('midt', 'gen-data', config=str(SMOKE), out=str(tmp_path))
        with mock.patch('apps.runs.services.train', side_effect=NonFiniteLossError(2, float('inf'))):
            with pytest.raises(CommandError) as excinfo:
                call_command('midt', 'train', config=str(SMOKE), out=str(tmp_path))
        assert excinfo.value.returncode == 3
        assert Run.objects.get(command='train').exit_code == 3

    def test_ledger_records_artifacts(self, tmp_path):
        call_command('midt', 'gen-data', config=str(SMOKE), out=str(tmp_path))
        run = Run.objects.get(command='gen-data')
        assert run.status == 'completed'
        assert run.exit_code == 0
        assert run.config_hash == RunConfig.load(SMOKE).config_hash
        kinds = set(run.artifacts.values_list('kind', flat=True))
        assert kinds == {'dataset', 'table'}
        for artifact in run.artifacts.all():
            assert artifact.sha256 == file_sha256(artifact.path)

    def test_failed_run_is_recorded(self, tmp_path):
        with pytest.raises(CommandError):
            call_command('midt', 'sample', config=str(SMOKE), out=str(tmp_path))
        run = Run.objects.get(command='sample')
        assert run.status == 'failed'
        assert run.exit_code == 2
        assert 'gen-data' in run.error_message

    def test_unexpected_error_is_recorded(self, tmp_path):
        PipelineService.run('gen-data', SMOKE, out=tmp_path)
        with mock.patch('apps.runs.services.train', side_effect=ValueError('bad batch')):
            with pytest.raises(ValueError):
                PipelineService.run('train', SMOKE, out=tmp_path)
        run = Run.objects.get(command='train')
        assert run.status == 'failed'
        assert run.exit_code == 1
        assert run.error_message == 'bad batch'


def test_unmigrated_database_only_warns(tmp_path):
    with mock.patch('apps.runs.ledger.Run') as run_model, mock.patch('apps.runs.ledger.logger') as logger:
        run_model.objects.create.side_effect = OperationalError('no such table: runs_run')
        PipelineService.run('gen-data', SMOKE, out=tmp_path)
    assert logger.warning.called
    assert (tmp_path / 'data' / 'dataset.json').exists()


class TestPipeline:
    def test_outputs(self, smoke_run):
        for relative in (
            'config.json', 'data/dataset.json', 'data/fold_summary.csv', 'checkpoints/model.json',
            'checkpoints/model.bin', 'traces/loss_trace.csv', 'data/synthetic.json',
            'eval/summary.json', 'eval/per_record.csv', 'privacy/privacy.json', 'report.json',
        ):
            assert (smoke_run / relative).exists(), relative

    def test_loss_trace(self, smoke_run):
        trace = read_csv_report(smoke_run / 'traces' / 'loss_trace.csv')
        assert list(trace['step']) == list(range(1, 21))
        assert np.isfinite(trace['L_Total']).all()
        np.testing.assert_allclose(trace['L_Total'], trace['L_MSE'] + 0.1 * trace['L_MIDT'], rtol=1e-6)

    def test_synthetic_set_mirrors_test_split(self, smoke_run):
        real = read_dataset(smoke_run / 'data' / 'dataset')
        synth = read_dataset(smoke_run / 'data' / 'synthetic')
        test = real.in_folds({10})
        assert len(synth) == len(test)
        assert synth.shape == test.shape
        assert [m.to_dict() for m in synth.metas()] == [m.to_dict() for m in test.metas()]

    def test_reports_carry_provenance(self, smoke_run):
        config_hash = RunConfig.load(SMOKE).config_hash
        summary = json.loads((smoke_run / 'eval' / 'summary.json').read_text())
        assert summary['provenance']['config_hash'] == config_hash
        assert {'fidelity', 'reference', 'correlation'} <= set(summary)
        first = (smoke_run / 'eval' / 'per_record.csv').read_text().splitlines()[0]
        assert first.startswith('# ')

    def test_privacy(self, smoke_run):
        privacy = json.loads((smoke_run / 'privacy' / 'privacy.json').read_text())
        assert 0.0 <= privacy['mir'] <= 1.0
        assert 0.0 <= privacy['nnaa'] <= 1.0

    def test_report_lists_missing_artifacts(self, smoke_run):
        report = json.loads((smoke_run / 'report.json').read_text())
        assert {'evaluation', 'privacy', 'training'} <= set(report)
        assert set(report['missing']) == {'faithfulness', 'downstream'}
        assert report['training']['steps'] == 20

    def test_rerun_is_byte_identical(self, smoke_run, tmp_path):
        for command in ('gen-data', 'train', 'sample', 'eval'):
            run_quietly(command, tmp_path)
        for relative in (
            'data/dataset.bin', 'data/dataset.json', 'checkpoints/model.bin', 'checkpoints/model.json',
            'traces/loss_trace.csv', 'data/synthetic.bin', 'eval/summary.json', 'eval/per_record.csv',
            'eval/per_lead.csv', 'eval/corr_diff.csv',
        ):
            assert (tmp_path / relative).read_bytes() == (smoke_run / relative).read_bytes(), relative

    def test_seed_override_changes_data(self, smoke_run, tmp_path):
        run_quietly('gen-data', tmp_path, seed=8)
        assert (tmp_path / 'data' / 'dataset.bin').read_bytes() != (smoke_run / 'data' / 'dataset.bin').read_bytes()


@pytest.mark.django_db
class TestExports:
    def test_export_record(self, smoke_run):
        PipelineService.run('export-record', SMOKE, out=smoke_run, index=1, dataset='synthetic')
        frame = read_csv_report(smoke_run / 'exports' / 'synthetic_record_1.csv')
        assert frame.columns[0] == 'time_s'
        assert frame.shape == (64, 3)

    def test_export_record_index_out_of_range(self, smoke_run):
        with pytest.raises(ConfigValidationError) as excinfo:
            PipelineService.run('export-record', SMOKE, out=smoke_run, index=10_000)
        assert excinfo.value.key_path == 'index'

    def test_export_conditioning(self, smoke_run):
        PipelineService.run('export-conditioning', SMOKE, out=smoke_run)
        frame = read_csv_report(smoke_run / 'exports' / 'conditioning.csv')
        test = read_dataset(smoke_run / 'data' / 'dataset').in_folds({10})
        assert len(frame) == len(test)

    def test_spectro_dump(self, smoke_run):
        PipelineService.run('spectro-dump', SMOKE, out=smoke_run, index=0, lead=1)
        for window in (16, 32):
            frame = read_csv_report(smoke_run / 'exports' / f'spectro_real_0_lead1_w{window}.csv')
            assert frame.columns[0] == 'time_s'
            assert np.isfinite(frame.iloc[:, 1:].to_numpy()).all()

    def test_spectro_dump_bad_lead(self, smoke_run):
        with pytest.raises(ConfigValidationError) as excinfo:
            PipelineService.run('spectro-dump', SMOKE, out=smoke_run, lead=2)
        assert excinfo.value.key_path == 'lead'


@pytest.mark.slow
@pytest.mark.django_db
def test_downstream_tables(smoke_run):
    PipelineService.run('downstream', SMOKE, out=smoke_run)
    table = read_csv_report(smoke_run / 'downstream' / 'foldmix_substitute.csv')
    assert set(table['generator']) == {'real_only', 'midt', 'baseline'}
    assert {'mean_0', 'mean_8'} <= set(table.columns)
    real_only = table.set_index('generator').loc['real_only']
    midt = table.set_index('generator').loc['midt']
    assert midt['mean_8'] == real_only['mean_8']
    assert (smoke_run / 'checkpoints' / 'baseline.json').exists()
    assert not (smoke_run / 'checkpoints' / 'midt.json').exists()
    faithfulness = json.loads((smoke_run / 'downstream' / 'faithfulness.json').read_text())
    assert 0.0 <= faithfulness['faithfulness'] <= 1.0


@pytest.mark.django_db
class TestLedgerModels:
    def test_duration(self):
        run = RunFactory()
        assert run.duration is None
        run.completed_at = run.started_at + timedelta(seconds=90)
        assert run.duration == 90.0

    def test_artifact_size(self):
        artifact = RunArtifactFactory(size_bytes=2560)
        assert artifact.size_kb == 2.5
        assert artifact.run.artifacts.count() == 1
        assert str(artifact) == f'checkpoint: {artifact.path}'
