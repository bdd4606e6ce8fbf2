# apps/runs/serializers.py
"""
Strict validation of run configuration documents.

Every section rejects keys it does not declare; ``flatten_errors`` turns the
nested DRF error structure into ``(key path, message)`` pairs such as
``('train.bta', 'Unknown field.')``.
"""

from collections.abc import Mapping

from rest_framework import serializers
from rest_framework.exceptions import ErrorDetail
from rest_framework.settings import api_settings

from apps.conditioning.exceptions import ConditioningError
from apps.conditioning.schema import resolve_mask
from apps.diffusion.exceptions import ScheduleError
from apps.diffusion.schedule import make_schedule
from apps.downstream.foldmix import MODES
from apps.signals.exceptions import OracleConfigError
from apps.signals.oracle import CLASS_CHOICES, OracleConfig
from apps.spectro.exceptions import SpectroError
from apps.spectro.loss import MidtConfig

DEFAULT_GENERATORS = [
    {'name': 'midt'},
    {'name': 'baseline', 'midt_weight': 0.0, 'mask': 'baseline'},
]


class StrictSerializer(serializers.Serializer):
    """Serializer that rejects undeclared keys"""

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            unknown = [key for key in data if key not in self.fields]
            if unknown:
                raise serializers.ValidationError({key: ['Unknown field.'] for key in unknown})
        return super().to_internal_value(data)


def seed_field():
    return serializers.IntegerField(min_value=0, allow_null=True, default=None)


def validate_mask_value(value):
    try:
        resolve_mask(value)
    except (ConditioningError, TypeError) as exc:
        raise serializers.ValidationError(str(exc))
    return value


class OracleSerializer(StrictSerializer):
    n_records = serializers.IntegerField(min_value=1, default=200)
    n_leads = serializers.IntegerField(min_value=1, default=12)
    length = serializers.IntegerField(min_value=16, default=256)
    sample_rate_hz = serializers.FloatField(min_value=1.0, default=100.0)
    latent_sources = serializers.IntegerField(min_value=1, default=3)
    mixing_matrix = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField()), allow_null=True, default=None,
    )
    noise_std = serializers.FloatField(min_value=0.0, default=0.05)
    class_set = serializers.ListField(
        child=serializers.ChoiceField(CLASS_CHOICES), min_length=1, default=lambda: list(CLASS_CHOICES),
    )
    records_per_patient = serializers.IntegerField(min_value=1, default=1)
    n_folds = serializers.IntegerField(min_value=1, max_value=10, default=10)
    heart_rate_bpm = serializers.ListField(
        child=serializers.FloatField(), min_length=2, max_length=2, default=lambda: [60.0, 100.0],
    )
    seed = seed_field()

    def validate(self, data):
        fields = {key: value for key, value in data.items() if key != 'seed'}
        fields['class_set'] = tuple(fields['class_set'])
        fields['heart_rate_bpm'] = tuple(fields['heart_rate_bpm'])
        try:
            OracleConfig(**fields).validate()
        except OracleConfigError as exc:
            raise serializers.ValidationError(str(exc))
        return data


class SplitSerializer(StrictSerializer):
    train_folds = serializers.ListField(
        child=serializers.IntegerField(min_value=1, max_value=10), min_length=1,
        default=lambda: list(range(1, 9)),
    )
    val_fold = serializers.IntegerField(min_value=1, max_value=10, allow_null=True, default=9)
    test_fold = serializers.IntegerField(min_value=1, max_value=10, default=10)

    def validate(self, data):
        held_out = {data['test_fold']}
        if data['val_fold'] is not None:
            if data['val_fold'] == data['test_fold']:
                raise serializers.ValidationError({'val_fold': 'Must differ from test_fold.'})
            held_out.add(data['val_fold'])
        if held_out & set(data['train_folds']):
            raise serializers.ValidationError({'train_folds': 'Overlaps the validation or test fold.'})
        return data


class ScheduleSerializer(StrictSerializer):
    steps = serializers.IntegerField(min_value=1, default=200)
    beta_start = serializers.FloatField(default=1e-4)
    beta_end = serializers.FloatField(default=0.02)

    def validate(self, data):
        try:
            make_schedule(data['steps'], data['beta_start'], data['beta_end'])
        except ScheduleError as exc:
            raise serializers.ValidationError(str(exc))
        return data


class NetSerializer(StrictSerializer):
    hidden = serializers.IntegerField(min_value=1, default=32)
    n_blocks = serializers.IntegerField(min_value=1, default=4)
    dilations = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=1, default=lambda: [1, 2, 4, 8],
    )
    kernel_size = serializers.IntegerField(min_value=1, default=3)
    step_embedding_dim = serializers.IntegerField(min_value=2, default=32)
    seed = seed_field()

    def validate_kernel_size(self, value):
        if value % 2 != 1:
            raise serializers.ValidationError('Must be odd.')
        return value

    def validate_step_embedding_dim(self, value):
        if value % 2:
            raise serializers.ValidationError('Must be even.')
        return value


class MidtSerializer(StrictSerializer):
    windows = serializers.ListField(
        child=serializers.IntegerField(min_value=2), min_length=2, default=lambda: [32, 64, 128],
    )
    hops = serializers.ListField(child=serializers.IntegerField(min_value=1), allow_null=True, default=None)
    n_mels = serializers.ListField(child=serializers.IntegerField(min_value=1), allow_null=True, default=None)
    f_min_hz = serializers.FloatField(min_value=0.0, default=0.0)
    f_max_hz = serializers.FloatField(allow_null=True, default=None)
    log_floor = serializers.FloatField(default=1e-5)

    def validate(self, data):
        if data['hops'] is not None and len(data['hops']) != len(data['windows']):
            raise serializers.ValidationError({'hops': 'Must list one hop per window.'})
        try:
            MidtConfig.from_windows(
                data['windows'], data['hops'], n_mels=data['n_mels'], log_floor=data['log_floor'],
            ).validate()
        except SpectroError as exc:
            raise serializers.ValidationError(str(exc))
        return data


class TrainSerializer(StrictSerializer):
    midt_weight = serializers.FloatField(min_value=0.0, default=0.1)
    batch_size = serializers.IntegerField(min_value=1, default=16)
    steps = serializers.IntegerField(min_value=1, default=300)
    learning_rate = serializers.FloatField(default=2e-3)
    mask = serializers.JSONField(default='all', validators=[validate_mask_value])
    adam_beta1 = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.9)
    adam_beta2 = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.999)
    adam_eps = serializers.FloatField(default=1e-8)
    log_every = serializers.IntegerField(min_value=1, default=50)
    midt = MidtSerializer()
    seed = seed_field()

    def validate_learning_rate(self, value):
        if value <= 0:
            raise serializers.ValidationError('Must be positive.')
        return value


class SampleSerializer(StrictSerializer):
    batch_size = serializers.IntegerField(min_value=1, default=64)
    seed = seed_field()


class MetricsSerializer(StrictSerializer):
    ssim_window = serializers.IntegerField(min_value=2, default=64)
    ssim_stride = serializers.IntegerField(min_value=1, default=32)
    seed = seed_field()


class ClassifierSerializer(StrictSerializer):
    hidden = serializers.IntegerField(min_value=1, default=16)
    kernel_size = serializers.IntegerField(min_value=1, default=5)
    steps = serializers.IntegerField(min_value=1, default=300)
    batch_size = serializers.IntegerField(min_value=1, default=32)
    learning_rate = serializers.FloatField(default=5e-3)

    def validate_kernel_size(self, value):
        if value % 2 != 1:
            raise serializers.ValidationError('Must be odd.')
        return value


class GeneratorSerializer(StrictSerializer):
    """A generator row of the fold-mix tables: the train section with overrides"""
    name = serializers.RegexField(r'^[a-z][a-z0-9_]*$', max_length=40)
    midt_weight = serializers.FloatField(min_value=0.0, allow_null=True, default=None)
    mask = serializers.JSONField(allow_null=True, default=None, validators=[validate_mask_value])


class DownstreamSerializer(StrictSerializer):
    mode = serializers.ChoiceField(MODES, default='substitute')
    folds_added = serializers.ListField(
        child=serializers.IntegerField(min_value=0, max_value=8), allow_null=True, default=None,
    )
    repetitions = serializers.IntegerField(min_value=1, default=5)
    test_fold = serializers.IntegerField(min_value=9, max_value=10, default=10)
    faithfulness_threshold = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.5)
    classifier = ClassifierSerializer()
    generators = GeneratorSerializer(many=True)
    seed = seed_field()

    def validate_generators(self, value):
        names = [entry['name'] for entry in value]
        if len(set(names)) != len(names):
            raise serializers.ValidationError('Generator names must be unique.')
        if 'real_only' in names:
            raise serializers.ValidationError("'real_only' is reserved.")
        return value


class PathsSerializer(StrictSerializer):
    runs_dir = serializers.CharField(allow_null=True, default=None)
    dataset = serializers.CharField(allow_null=True, default=None)


class RunConfigSerializer(StrictSerializer):
    seed = serializers.IntegerField(min_value=0)
    oracle = OracleSerializer()
    split = SplitSerializer()
    schedule = ScheduleSerializer()
    net = NetSerializer()
    train = TrainSerializer()
    sample = SampleSerializer()
    metrics = MetricsSerializer()
    downstream = DownstreamSerializer()
    paths = PathsSerializer()

    def validate(self, data):
        # an external dataset's length is only known once it is read
        if data['paths']['dataset'] is not None:
            return data
        length = data['oracle']['length']
        too_long = [w for w in data['train']['midt']['windows'] if w > length]
        if too_long:
            raise serializers.ValidationError({'train': {'midt': {'windows': [
                f'Windows {too_long} exceed oracle.length {length}.',
            ]}}})
        if data['metrics']['ssim_window'] > length:
            raise serializers.ValidationError({'metrics': {'ssim_window': [
                f'Exceeds oracle.length {length}.',
            ]}})
        return data


SECTIONS = ('oracle', 'split', 'schedule', 'net', 'train', 'sample', 'metrics', 'downstream', 'paths')
NESTED_SECTIONS = {'train': ('midt',), 'downstream': ('classifier',)}


def with_section_defaults(raw):
    """Copy of ``raw`` with absent sections present as empty objects"""
    if not isinstance(raw, Mapping):
        return raw
    data = dict(raw)
    for section in SECTIONS:
        data.setdefault(section, {})
        if not isinstance(data[section], Mapping):
            continue
        data[section] = dict(data[section])
        for nested in NESTED_SECTIONS.get(section, ()):
            data[section].setdefault(nested, {})
    if isinstance(data['downstream'], dict):
        data['downstream'].setdefault('generators', [dict(g) for g in DEFAULT_GENERATORS])
    return data


def flatten_errors(detail, prefix=''):
    """Yield (key path, message) pairs from a DRF error structure"""
    if isinstance(detail, Mapping):
        for key, value in detail.items():
            if key == api_settings.NON_FIELD_ERRORS_KEY:
                yield from flatten_errors(value, prefix)
            else:
                yield from flatten_errors(value, f'{prefix}.{key}' if prefix else str(key))
    elif isinstance(detail, list):
        if all(isinstance(item, (str, ErrorDetail)) for item in detail):
            yield prefix or '<root>', ' '.join(str(item) for item in detail)
        else:
            for index, item in enumerate(detail):
                if item:
                    yield from flatten_errors(item, f'{prefix}[{index}]')
    else:
        yield prefix or '<root>', str(detail)
