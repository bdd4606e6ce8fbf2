# apps/core/reporting.py
"""
Writers shared by every report-emitting command.

CSVs are written through pandas with a fixed float format and ``\n`` line
endings and start with ``#`` provenance lines, so identical runs produce
byte-identical files. Read them back with ``pandas.read_csv(path, comment='#')``.
"""

import json
from pathlib import Path

import pandas as pd
from django.conf import settings

FLOAT_FORMAT = '%.10g'


def provenance(config_hash, seed):
    """Fields embedded in every emitted report"""
    return {
        'config_hash': config_hash,
        'seed': int(seed),
        'metric_definitions': settings.MIDT['METRIC_DEFINITIONS_VERSION'],
    }


def write_csv_report(frame, path, prov=None, index=False):
    """Write a DataFrame as CSV preceded by ``# key=value`` provenance lines"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as handle:
        for key, value in sorted((prov or {}).items()):
            handle.write(f'# {key}={value}\n')
        frame.to_csv(handle, index=index, float_format=FLOAT_FORMAT, lineterminator='\n')
    return path


def read_csv_report(path, **kwargs):
    return pd.read_csv(path, comment='#', **kwargs)


def write_json_report(payload, path, prov=None):
    """Write a JSON summary with sorted keys and embedded provenance"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = dict(payload)
    if prov:
        document['provenance'] = prov
    with open(path, 'w') as handle:
        json.dump(document, handle, indent=2, sort_keys=True, default=_jsonable)
        handle.write('\n')
    return path


def _jsonable(value):
    """Convert numpy scalars/arrays for json.dump"""
    if hasattr(value, 'tolist'):
        return value.tolist()
    raise TypeError(f'Object of type {type(value).__name__} is not JSON serializable')
