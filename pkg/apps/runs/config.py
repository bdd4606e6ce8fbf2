# apps/runs/config.py
"""
Validated run configuration.

A run configuration is a JSON document with a top-level ``seed`` and one
object per section (see ``apps.runs.serializers``). Section seeds left
out, or all of them when the seed is overridden from the command line, are
derived from the top-level seed so that no randomness is hidden.

The config hash is the SHA-256 of the canonical JSON (sorted keys, no
whitespace) of everything but the ``paths`` section; runs live under
``<runs_dir>/<hash[:12]>``.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from django.conf import settings

from apps.core.rng import derive_seed
from apps.denoiser.network import NetConfig
from apps.diffusion.schedule import make_schedule
from apps.diffusion.training import TrainConfig
from apps.downstream.classifier import ClassifierConfig
from apps.downstream.foldmix import FoldMixPlan
from apps.runs.exceptions import ConfigValidationError
from apps.runs.serializers import RunConfigSerializer, flatten_errors, with_section_defaults
from apps.signals.oracle import OracleConfig
from apps.spectro.loss import MidtConfig

logger = logging.getLogger(__name__)

SEEDED_SECTIONS = ('oracle', 'net', 'train', 'sample', 'metrics', 'downstream')
UNHASHED_SECTIONS = ('paths',)


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw, seed=None):
        """Validate ``raw``; ``seed`` replaces the top-level seed and re-derives every section seed"""
        serializer = RunConfigSerializer(data=with_section_defaults(raw))
        if not serializer.is_valid():
            key_path, message = next(flatten_errors(serializer.errors))
            logger.warning(f'Rejected run configuration at {key_path}: {message}')
            raise ConfigValidationError(key_path, message)
        data = json.loads(json.dumps(serializer.validated_data))
        if seed is not None:
            data['seed'] = int(seed)
        for index, section in enumerate(SEEDED_SECTIONS, start=1):
            if seed is None and data[section]['seed'] is not None:
                continue
            derived = derive_seed(data['seed'], index)
            data[section]['seed'] = derived
            if seed is None:
                logger.info(f'{section}.seed absent, derived {derived} from the top-level seed')
        return cls(data)

    @classmethod
    def load(cls, path, seed=None):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f'config file not found: {path}')
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigValidationError('<root>', f'not valid JSON: {exc}')
        return cls.from_dict(raw, seed)

    @property
    def seed(self):
        return self.data['seed']

    @property
    def config_hash(self):
        hashed = {key: value for key, value in self.data.items() if key not in UNHASHED_SECTIONS}
        return hashlib.sha256(canonical_json(hashed).encode('utf-8')).hexdigest()

    def section(self, name):
        return self.data[name]

    def run_dir(self, out=None):
        if out is not None:
            return Path(out)
        runs_dir = self.data['paths']['runs_dir'] or settings.MIDT['RUNS_DIR']
        return Path(runs_dir) / self.config_hash[:12]

    # Domain configs

    def oracle_config(self):
        fields = {key: value for key, value in self.data['oracle'].items() if key != 'seed'}
        fields['class_set'] = tuple(fields['class_set'])
        fields['heart_rate_bpm'] = tuple(fields['heart_rate_bpm'])
        return OracleConfig(**fields)

    def net_config(self, channels):
        net = self.data['net']
        return NetConfig(
            channels=int(channels),
            hidden=net['hidden'],
            n_blocks=net['n_blocks'],
            dilations=tuple(net['dilations']),
            kernel_size=net['kernel_size'],
            step_embedding_dim=net['step_embedding_dim'],
        ).validate()

    def midt_config(self):
        midt = self.data['train']['midt']
        return MidtConfig.from_windows(
            midt['windows'], midt['hops'],
            n_mels=midt['n_mels'],
            f_min_hz=midt['f_min_hz'],
            f_max_hz=midt['f_max_hz'],
            log_floor=midt['log_floor'],
        )

    def schedule(self):
        sched = self.data['schedule']
        return make_schedule(sched['steps'], sched['beta_start'], sched['beta_end'])

    def train_config(self, midt_weight=None, mask=None):
        train, sched = self.data['train'], self.data['schedule']
        cfg = TrainConfig(
            midt_weight=train['midt_weight'],
            batch_size=train['batch_size'],
            steps=train['steps'],
            learning_rate=train['learning_rate'],
            seed=train['seed'],
            midt=self.midt_config(),
            mask=train['mask'],
            diffusion_steps=sched['steps'],
            beta_start=sched['beta_start'],
            beta_end=sched['beta_end'],
            adam_beta1=train['adam_beta1'],
            adam_beta2=train['adam_beta2'],
            adam_eps=train['adam_eps'],
            log_every=train['log_every'],
        )
        if midt_weight is not None:
            cfg = replace(cfg, midt_weight=midt_weight)
        if mask is not None:
            cfg = replace(cfg, mask=mask)
        return cfg

    def classifier_config(self, seed=0):
        return ClassifierConfig(seed=seed, **self.data['downstream']['classifier'])

    def fold_mix_plan(self):
        downstream = self.data['downstream']
        return FoldMixPlan(
            mode=downstream['mode'],
            folds_added=downstream['folds_added'],
            test_fold=downstream['test_fold'],
            repetitions=downstream['repetitions'],
            seed=downstream['seed'],
            classifier=self.classifier_config(),
        )
