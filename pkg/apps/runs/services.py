# apps/runs/services.py
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from apps.conditioning.services import ConditioningService
from apps.core.reporting import provenance, read_csv_report, write_csv_report, write_json_report
from apps.diffusion.exceptions import NonFiniteLossError
from apps.diffusion.model import DiffusionModel
from apps.diffusion.services import DiffusionService
from apps.diffusion.training import train
from apps.downstream.services import DownstreamService
from apps.metrics.privacy import PrivacyReport
from apps.metrics.services import EvaluationService
from apps.runs.checkpoints import checkpoint_paths, load_model, save_model
from apps.runs.config import RunConfig
from apps.runs.exceptions import CheckpointError, ConfigValidationError, MissingArtifactError
from apps.runs.ledger import RunLedger
from apps.signals.exceptions import DatasetFormatError, OracleConfigError, SplitError
from apps.signals.oracle import make_oracle_dataset
from apps.signals.services import DatasetService
from apps.signals.storage import dataset_paths, read_dataset, write_dataset
from apps.spectro.exceptions import SpectroError
from apps.spectro.services import SpectroService

logger = logging.getLogger(__name__)

COMMANDS = (
    'gen-data', 'train', 'sample', 'eval', 'privacy', 'downstream', 'report',
    'export-record', 'export-conditioning', 'spectro-dump',
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2
EXIT_NON_FINITE = 3

INPUT_ERRORS = (
    ConfigValidationError, MissingArtifactError, CheckpointError, DatasetFormatError,
    OracleConfigError, SplitError, FileNotFoundError,
)


def exit_code_for(exc):
    """Stable exit status of a failed command"""
    if isinstance(exc, NonFiniteLossError):
        return EXIT_NON_FINITE
    if isinstance(exc, INPUT_ERRORS):
        return EXIT_INPUT
    return EXIT_FAILURE


@dataclass
class RunContext:
    """Validated config, run directory and per-command options"""
    config: RunConfig
    run_dir: Path
    options: dict = field(default_factory=dict)
    ledger: RunLedger = None

    @property
    def prov(self):
        return provenance(self.config.config_hash, self.config.seed)

    def path(self, *parts):
        return self.run_dir.joinpath(*parts)

    def record(self, path, kind):
        if self.ledger is not None:
            self.ledger.record(path, kind)
        return path


class PipelineService:
    """Service running the pipeline commands inside a run directory"""

    @staticmethod
    def run(command, config_path, out=None, seed=None, **options):
        """
        Run one command

        Args:
            command: one of COMMANDS
            config_path: JSON run configuration
            out: run directory override (default ``<runs_dir>/<hash[:12]>``)
            seed: override of the top-level seed; re-derives every section seed
            options: ``index``, ``lead`` and ``dataset`` for the export commands

        Returns:
            Path of the run directory
        """
        if command not in COMMANDS:
            raise ConfigValidationError('command', f"unknown command '{command}'")
        config = RunConfig.load(config_path, seed)
        run_dir = config.run_dir(out)
        run_dir.mkdir(parents=True, exist_ok=True)
        ctx = RunContext(config, run_dir, options)
        ctx.ledger = RunLedger(command, config, run_dir)
        with open(run_dir / 'config.json', 'w') as handle:
            json.dump(config.data, handle, indent=2, sort_keys=True)
            handle.write('\n')

        logger.info(f'{command} started in {run_dir} (config {config.config_hash[:12]})')
        handler = getattr(PipelineService, command.replace('-', '_'))
        try:
            handler(ctx)
        except Exception as exc:
            code = exit_code_for(exc)
            logger.error(f'{command} failed with exit code {code}: {exc}')
            ctx.ledger.finish(code, exc)
            raise
        ctx.ledger.finish(EXIT_OK)
        logger.info(f'{command} finished in {run_dir}')
        return run_dir

    # Inputs

    @staticmethod
    def _read(ctx, stem, command):
        header, _ = dataset_paths(ctx.path('data', stem))
        if not header.exists():
            raise MissingArtifactError(header, command)
        return read_dataset(header)

    @staticmethod
    def _splits(ctx, ds):
        split = ctx.config.section('split')
        return DatasetService.patient_split(
            ds, split['train_folds'], split['val_fold'], split['test_fold'],
        )

    @staticmethod
    def _model(ctx, name='model'):
        manifest, _ = checkpoint_paths(ctx.path('checkpoints', name))
        if not manifest.exists():
            raise MissingArtifactError(manifest, 'train')
        return load_model(manifest, ctx.config.config_hash)

    @staticmethod
    def _train_model(ctx, train_set, name, midt_weight=None, mask=None):
        """Train, checkpoint and reload one model so every consumer sees the float32 values"""
        config = ctx.config
        cfg = config.train_config(midt_weight, mask)
        length, channels = train_set.shape
        try:
            cfg.midt.validate(length)
        except SpectroError as exc:
            raise ConfigValidationError('train.midt.windows', f'{exc} (dataset length {length})') from exc
        model = DiffusionModel.initialize(
            config.net_config(channels), length, config.section('net')['seed'],
            sample_rate_hz=train_set.sample_rate_hz, mask=cfg.mask,
        )
        result = train(train_set, model, cfg)
        trace_name = 'loss_trace.csv' if name == 'model' else f'{name}_loss_trace.csv'
        ctx.record(
            DiffusionService.write_loss_trace(result.trace, ctx.path('traces', trace_name), ctx.prov),
            'trace',
        )
        for path in save_model(model, ctx.path('checkpoints', name), config.config_hash):
            ctx.record(path, 'checkpoint')
        return load_model(ctx.path('checkpoints', name), config.config_hash)

    # Commands

    @staticmethod
    def gen_data(ctx):
        config = ctx.config
        external = config.section('paths')['dataset']
        if external:
            ds = read_dataset(external)
            logger.info(f'Loaded {len(ds)} records from {external}')
        else:
            ds = make_oracle_dataset(config.oracle_config(), config.section('oracle')['seed'])
        for path in write_dataset(ds, ctx.path('data', 'dataset')):
            ctx.record(path, 'dataset')
        summary = DatasetService.fold_summary(ds)
        ctx.record(write_csv_report(summary, ctx.path('data', 'fold_summary.csv'), ctx.prov), 'table')

    @staticmethod
    def train(ctx):
        train_set, _, _ = PipelineService._splits(ctx, PipelineService._read(ctx, 'dataset', 'gen-data'))
        PipelineService._train_model(ctx, train_set, 'model')

    @staticmethod
    def sample(ctx):
        config = ctx.config
        _, _, test = PipelineService._splits(ctx, PipelineService._read(ctx, 'dataset', 'gen-data'))
        model = PipelineService._model(ctx)
        sample_cfg = config.section('sample')
        synth = DiffusionService.synthesize(
            model, test, config.schedule(), sample_cfg['seed'], sample_cfg['batch_size'],
        )
        for path in write_dataset(synth, ctx.path('data', 'synthetic')):
            ctx.record(path, 'dataset')

    @staticmethod
    def eval(ctx):
        _, _, test = PipelineService._splits(ctx, PipelineService._read(ctx, 'dataset', 'gen-data'))
        synth = PipelineService._read(ctx, 'synthetic', 'sample')
        metrics = ctx.config.section('metrics')
        EvaluationService.evaluate(
            test, synth, ctx.path('eval'), ctx.prov, seed=metrics['seed'],
            ssim_window=metrics['ssim_window'], ssim_stride=metrics['ssim_stride'],
        )
        for path in sorted(ctx.path('eval').iterdir()):
            ctx.record(path, 'report')

    @staticmethod
    def privacy(ctx):
        """Members are the training split; the held-out test fold is the non-member set"""
        train_set, _, test = PipelineService._splits(
            ctx, PipelineService._read(ctx, 'dataset', 'gen-data'),
        )
        synth = PipelineService._read(ctx, 'synthetic', 'sample')
        report = PrivacyReport.build(train_set, test, synth).to_dict()
        path = write_json_report(report, ctx.path('privacy', 'privacy.json'), ctx.prov)
        ctx.record(path, 'report')
        logger.info(f"MIR={report['mir']:.4f} NNAA={report['nnaa']:.4f}")

    @staticmethod
    def downstream(ctx):
        config = ctx.config
        real = PipelineService._read(ctx, 'dataset', 'gen-data')
        train_set, _, test = PipelineService._splits(ctx, real)
        section = config.section('downstream')
        sched = config.schedule()
        batch_size = config.section('sample')['batch_size']

        generators = {}
        for entry in section['generators']:
            name = entry['name']
            overridden = entry['midt_weight'] is not None or entry['mask'] is not None
            if not overridden and checkpoint_paths(ctx.path('checkpoints', 'model'))[0].exists():
                model = PipelineService._model(ctx)
            else:
                model = PipelineService._train_model(
                    ctx, train_set, name, entry['midt_weight'], entry['mask'],
                )
            generators[name] = _synthesizer(model, sched, batch_size)

        out_dir = ctx.path('downstream')
        DownstreamService.run_fold_mix(real, generators, config.fold_mix_plan(), out_dir, ctx.prov)

        synth_header, _ = dataset_paths(ctx.path('data', 'synthetic'))
        if synth_header.exists():
            DownstreamService.faithfulness_report(
                train_set, test, read_dataset(synth_header),
                config.classifier_config(seed=section['seed']),
                out_dir / 'faithfulness.json', ctx.prov, section['faithfulness_threshold'],
            )
        else:
            logger.info('No synthetic set yet; faithfulness skipped')
        for path in sorted(out_dir.iterdir()):
            ctx.record(path, 'table')

    @staticmethod
    def report(ctx):
        """Collect whatever the earlier commands produced into report.json"""
        plan = ctx.config.fold_mix_plan()
        sources = {
            'evaluation': ctx.path('eval', 'summary.json'),
            'privacy': ctx.path('privacy', 'privacy.json'),
            'faithfulness': ctx.path('downstream', 'faithfulness.json'),
        }
        summary = {'config_hash': ctx.config.config_hash, 'missing': []}
        for key, path in sources.items():
            if path.exists():
                document = json.loads(path.read_text())
                document.pop('provenance', None)
                summary[key] = document
            else:
                summary['missing'].append(key)

        trace_path = ctx.path('traces', 'loss_trace.csv')
        if trace_path.exists():
            summary['training'] = _trace_summary(read_csv_report(trace_path))
        else:
            summary['missing'].append('training')

        table_path = ctx.path('downstream', f'foldmix_{plan.mode}.csv')
        if table_path.exists():
            table = read_csv_report(table_path).set_index('generator')
            summary['downstream'] = {
                'mode': plan.mode,
                'mean_auroc': {
                    name: {column[5:]: _finite(value) for column, value in row.items() if column.startswith('mean_')}
                    for name, row in table.iterrows()
                },
            }
        else:
            summary['missing'].append('downstream')

        path = write_json_report(summary, ctx.path('report.json'), ctx.prov)
        ctx.record(path, 'report')

    @staticmethod
    def export_record(ctx):
        which = ctx.options.get('dataset') or 'real'
        ds = PipelineService._dataset_option(ctx, which)
        index = int(ctx.options.get('index') or 0)
        if not 0 <= index < len(ds):
            raise ConfigValidationError('index', f'record index {index} outside 0..{len(ds) - 1}')
        path = ctx.path('exports', f'{which}_record_{index}.csv')
        ctx.record(DatasetService.export_record(ds, index, path, ctx.prov), 'export')

    @staticmethod
    def export_conditioning(ctx):
        _, _, test = PipelineService._splits(ctx, PipelineService._read(ctx, 'dataset', 'gen-data'))
        model = PipelineService._model(ctx)
        path = ConditioningService.export_vectors(
            test, model.tables, ctx.path('exports', 'conditioning.csv'), model.mask, ctx.prov,
        )
        ctx.record(path, 'export')

    @staticmethod
    def spectro_dump(ctx):
        which = ctx.options.get('dataset') or 'real'
        ds = PipelineService._dataset_option(ctx, which)
        index = int(ctx.options.get('index') or 0)
        lead = int(ctx.options.get('lead') or 0)
        if not 0 <= index < len(ds):
            raise ConfigValidationError('index', f'record index {index} outside 0..{len(ds) - 1}')
        if not 0 <= lead < ds.shape[1]:
            raise ConfigValidationError('lead', f'lead index {lead} outside 0..{ds.shape[1] - 1}')
        paths = SpectroService.dump(
            ds[index], lead, ctx.config.midt_config(), ctx.path('exports'),
            f'spectro_{which}_{index}_lead{lead}', ctx.prov,
        )
        for path in paths:
            ctx.record(path, 'export')

    @staticmethod
    def _dataset_option(ctx, which):
        if which == 'synthetic':
            return PipelineService._read(ctx, 'synthetic', 'sample')
        if which != 'real':
            raise ConfigValidationError('dataset', f"expected 'real' or 'synthetic', got '{which}'")
        return PipelineService._read(ctx, 'dataset', 'gen-data')


def _synthesizer(model, sched, batch_size):
    def generate(template, seed):
        return DiffusionService.synthesize(model, template, sched, seed, batch_size)
    return generate


def _finite(value):
    return float(value) if np.isfinite(value) else None


def _trace_summary(trace):
    window = min(50, len(trace))
    first = float(trace['L_Total'].iloc[:window].mean())
    last = float(trace['L_Total'].iloc[-window:].mean())
    return {
        'steps': int(trace['step'].iloc[-1]),
        'final': {key: float(trace[key].iloc[-1]) for key in ('L_MSE', 'L_MIDT', 'L_Total')},
        'first_window_mean': first,
        'last_window_mean': last,
        'reduction': 1.0 - last / first if first else None,
    }
