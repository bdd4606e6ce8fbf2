# apps/signals/storage.py
"""
On-disk dataset format.

A dataset is two files sharing a stem:

``<stem>.json`` (header sidecar), fields in this order:
    magic            "MIDT"
    version          integer format version
    record_count     number of records
    length           samples per lead (null when empty)
    n_leads          leads per record (null when empty)
    sample_rate_hz   float
    dtype            "<f4"
    payload          file name of the blob
    records          list of {fold, patient_id, age_years, gender,
                     diagnostic_labels, form_labels, rhythm_labels, class_name}

``<stem>.bin`` (payload blob):
    4 bytes   b"MIDT"
    4 bytes   version, uint32 little-endian
    8 bytes   record count, uint64 little-endian
    then      record_count x length x n_leads float32 little-endian,
              record-major, then time, then lead
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np
from django.conf import settings

from apps.signals.exceptions import BadMagicError, MalformedHeaderError, TruncatedPayloadError
from apps.signals.records import Dataset, LeadSet, Record, RecordMeta

logger = logging.getLogger(__name__)

MAGIC = b'MIDT'
BLOB_PREFIX = struct.Struct('<4sIQ')
PAYLOAD_DTYPE = '<f4'

HEADER_FIELDS = (
    'magic', 'version', 'record_count', 'length', 'n_leads', 'sample_rate_hz', 'dtype',
    'payload', 'records',
)


def dataset_paths(path):
    """(header, blob) paths for a stem or for either file"""
    path = Path(path)
    if path.suffix in ('.json', '.bin'):
        path = path.with_suffix('')
    return path.with_suffix('.json'), path.with_suffix('.bin')


def write_dataset(ds, path):
    header_path, blob_path = dataset_paths(path)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    version = settings.MIDT['DATASET_FORMAT_VERSION']
    shape = ds.shape
    header = {
        'magic': MAGIC.decode('ascii'),
        'version': version,
        'record_count': len(ds),
        'length': shape[0] if shape else None,
        'n_leads': shape[1] if shape else None,
        'sample_rate_hz': ds.sample_rate_hz,
        'dtype': PAYLOAD_DTYPE,
        'payload': blob_path.name,
        'records': [{'fold': r.fold, **r.meta.to_dict()} for r in ds],
    }
    with open(header_path, 'w') as handle:
        json.dump(header, handle, indent=2)
        handle.write('\n')
    with open(blob_path, 'wb') as handle:
        handle.write(BLOB_PREFIX.pack(MAGIC, version, len(ds)))
        if len(ds):
            handle.write(ds.signals().astype(PAYLOAD_DTYPE).tobytes())
    logger.info(f'Wrote {len(ds)} records to {header_path}')
    return header_path, blob_path


def _read_header(header_path):
    try:
        with open(header_path) as handle:
            header = json.load(handle)
    except json.JSONDecodeError as exc:
        raise MalformedHeaderError(f'header is not valid JSON: {exc}', path=header_path)
    if not isinstance(header, dict):
        raise MalformedHeaderError('header must be a JSON object', path=header_path)
    missing = [name for name in HEADER_FIELDS if name not in header]
    if missing:
        raise MalformedHeaderError(f'header is missing fields {missing}', path=header_path)
    if header['magic'] != MAGIC.decode('ascii'):
        raise BadMagicError(header['magic'], path=header_path)
    if header['version'] != settings.MIDT['DATASET_FORMAT_VERSION']:
        raise MalformedHeaderError(f"unsupported version {header['version']}", path=header_path)
    if header['dtype'] != PAYLOAD_DTYPE or len(header['records']) != header['record_count']:
        raise MalformedHeaderError('header dtype or record list is inconsistent', path=header_path)
    return header


def read_dataset(path):
    header_path, blob_path = dataset_paths(path)
    if not header_path.exists() or not blob_path.exists():
        raise FileNotFoundError(f'dataset not found at {header_path.with_suffix("")}')
    header = _read_header(header_path)
    blob = blob_path.read_bytes()
    if len(blob) < BLOB_PREFIX.size:
        raise TruncatedPayloadError(BLOB_PREFIX.size, len(blob), path=blob_path)
    magic, version, count = BLOB_PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(magic, path=blob_path)
    if version != header['version'] or count != header['record_count']:
        raise MalformedHeaderError('header and payload disagree on version or count', path=blob_path)

    count = header['record_count']
    if count == 0:
        return Dataset()
    length, n_leads = header['length'], header['n_leads']
    expected = BLOB_PREFIX.size + count * length * n_leads * 4
    if len(blob) != expected:
        raise TruncatedPayloadError(expected, len(blob), path=blob_path)
    signals = np.frombuffer(blob, dtype=PAYLOAD_DTYPE, offset=BLOB_PREFIX.size)
    signals = signals.reshape(count, length, n_leads).astype(np.float64)

    records = []
    for i, entry in enumerate(header['records']):
        entry = dict(entry)
        try:
            fold = entry.pop('fold')
            meta = RecordMeta.from_dict(entry)
        except (KeyError, TypeError) as exc:
            raise MalformedHeaderError(f'record {i}: {exc}', path=header_path)
        records.append(Record(LeadSet(signals[i], header['sample_rate_hz']), meta, fold))
    return Dataset(records)
