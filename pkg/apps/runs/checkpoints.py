# apps/runs/checkpoints.py
"""
Checkpoint format.

A checkpoint is two files sharing a stem:

``<stem>.json`` (manifest):
    format           "midt-checkpoint"
    version          integer format version
    config_hash      hash of the run that wrote it
    dtype            "<f4"
    payload          file name of the blob
    parameters       list of {name, shape, size, offset} in blob order
    model            denoiser and conditioning settings (optional)

``<stem>.bin`` (payload): the parameters as little-endian float32, one after
the other in manifest order, ``offset`` counted in values.

Values are quantized to float32 on save, so a reload equals the quantized
store bit for bit.
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np
from django.conf import settings

from apps.autodiff.optim import ParameterStore
from apps.conditioning.embeddings import EmbeddingTables, table_name
from apps.conditioning.exceptions import ConditioningError
from apps.conditioning.schema import GroupSchema
from apps.denoiser.network import NetConfig
from apps.diffusion.model import DiffusionModel
from apps.runs.exceptions import CheckpointError
from apps.signals.records import quantize_float32

logger = logging.getLogger(__name__)

FORMAT = 'midt-checkpoint'
PAYLOAD_DTYPE = '<f4'
MANIFEST_FIELDS = ('format', 'version', 'config_hash', 'dtype', 'payload', 'parameters')


def checkpoint_paths(path):
    path = Path(path)
    if path.suffix in ('.json', '.bin'):
        path = path.with_suffix('')
    return path.with_suffix('.json'), path.with_suffix('.bin')


def quantize_store(store):
    """Copy of ``store`` with every value rounded to float32"""
    return ParameterStore({name: quantize_float32(value) for name, value in store.items()})


def save_checkpoint(store, path, config_hash, model=None):
    manifest_path, blob_path = checkpoint_paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    for name, value in store.items():
        entries.append({'name': name, 'shape': list(value.shape), 'size': int(value.size), 'offset': offset})
        offset += int(value.size)
    manifest = {
        'format': FORMAT,
        'version': settings.MIDT['CHECKPOINT_FORMAT_VERSION'],
        'config_hash': config_hash,
        'dtype': PAYLOAD_DTYPE,
        'payload': blob_path.name,
        'parameters': entries,
    }
    if model is not None:
        manifest['model'] = model
    with open(manifest_path, 'w') as handle:
        json.dump(manifest, handle, indent=2)
        handle.write('\n')
    with open(blob_path, 'wb') as handle:
        for _, value in store.items():
            handle.write(np.ascontiguousarray(value).astype(PAYLOAD_DTYPE).tobytes())
    logger.info(f'Saved {len(entries)} parameters ({offset} values) to {manifest_path}')
    return manifest_path, blob_path


def _read_manifest(manifest_path):
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f'manifest is not valid JSON: {exc}', path=manifest_path)
    missing = [name for name in MANIFEST_FIELDS if name not in manifest]
    if missing:
        raise CheckpointError(f'manifest is missing fields {missing}', path=manifest_path)
    if manifest['format'] != FORMAT or manifest['dtype'] != PAYLOAD_DTYPE:
        raise CheckpointError('not a midt checkpoint manifest', path=manifest_path)
    if manifest['version'] != settings.MIDT['CHECKPOINT_FORMAT_VERSION']:
        raise CheckpointError(f"unsupported checkpoint version {manifest['version']}", path=manifest_path)
    return manifest


def load_checkpoint(path, config_hash=None):
    """
    Read a checkpoint back into a ParameterStore.

    Returns (store, manifest). A ``config_hash`` other than the manifest's
    is rejected.
    """
    manifest_path, blob_path = checkpoint_paths(path)
    if not manifest_path.exists() or not blob_path.exists():
        raise FileNotFoundError(f'checkpoint not found at {manifest_path.with_suffix("")}')
    manifest = _read_manifest(manifest_path)
    if config_hash is not None and manifest['config_hash'] != config_hash:
        raise CheckpointError(
            f"checkpoint was written by config {manifest['config_hash'][:12]}, not {config_hash[:12]}",
            path=manifest_path,
        )

    offset = 0
    for entry in manifest['parameters']:
        if int(np.prod(entry['shape'], dtype=np.int64)) != entry['size'] or entry['offset'] != offset:
            raise CheckpointError(
                f"parameter '{entry['name']}': shape {entry['shape']} does not match its "
                f"{entry['size']} stored values at offset {entry['offset']}",
                parameter=entry['name'], path=manifest_path,
            )
        offset += entry['size']

    blob = blob_path.read_bytes()
    if len(blob) != offset * 4:
        raise CheckpointError(
            f'payload length mismatch: manifest describes {offset * 4} bytes, blob has {len(blob)}',
            path=blob_path,
        )
    values = np.frombuffer(blob, dtype=PAYLOAD_DTYPE).astype(np.float64)
    store = ParameterStore()
    for entry in manifest['parameters']:
        chunk = values[entry['offset']:entry['offset'] + entry['size']]
        store.add(entry['name'], chunk.reshape(entry['shape']))
    return store, manifest


def model_manifest(model):
    return {
        'net': {**asdict(model.net), 'dilations': list(model.net.dilations)},
        'length': model.length,
        'sample_rate_hz': model.sample_rate_hz,
        'mask': list(model.mask),
        'schema': asdict(model.schema),
    }


def save_model(model, path, config_hash):
    return save_checkpoint(model.store, path, config_hash, model=model_manifest(model))


def load_model(path, config_hash=None):
    """Rebuild a DiffusionModel, checking every tensor against the network shapes"""
    store, manifest = load_checkpoint(path, config_hash)
    if 'model' not in manifest:
        raise CheckpointError('checkpoint carries no model settings', path=path)
    saved = manifest['model']
    net = NetConfig(**{**saved['net'], 'dilations': tuple(saved['net']['dilations'])})
    for name, shape in net.parameter_shapes().items():
        if name not in store:
            raise CheckpointError(f"missing parameter '{name}'", parameter=name, path=path)
        if store[name].shape != tuple(shape):
            raise CheckpointError(
                f"parameter '{name}' has shape {list(store[name].shape)}, network expects {list(shape)}",
                parameter=name, path=path,
            )
    schema = GroupSchema(**saved['schema'])
    try:
        EmbeddingTables(store, schema)
    except ConditioningError as exc:
        group = exc.context.get('group')
        raise CheckpointError(str(exc), parameter=table_name(group) if group else None, path=path) from exc
    return DiffusionModel(
        store, net, saved['length'], schema, saved['sample_rate_hz'], saved['mask'],
    )
