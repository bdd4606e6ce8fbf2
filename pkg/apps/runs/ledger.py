# apps/runs/ledger.py
"""
Run bookkeeping in the database.

The ledger only mirrors what is on disk; when the database is missing or
unmigrated every call logs a warning and the command carries on.
"""

import hashlib
import logging
from pathlib import Path

from django.db import DatabaseError
from django.utils import timezone

from .models import Run, RunArtifact

logger = logging.getLogger(__name__)


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


class RunLedger:
    def __init__(self, command, config, run_dir):
        self.run = None
        try:
            self.run = Run.objects.create(
                command=command,
                config_hash=config.config_hash,
                seed=config.seed,
                run_dir=str(run_dir),
                parameters=config.data,
                status='running',
                started_at=timezone.now(),
            )
        except DatabaseError as exc:
            logger.warning(f'Run ledger unavailable, continuing without it: {exc}')

    def record(self, path, kind):
        if self.run is None:
            return
        path = Path(path)
        try:
            RunArtifact.objects.create(
                run=self.run,
                kind=kind,
                path=str(path),
                size_bytes=path.stat().st_size,
                sha256=file_sha256(path),
            )
        except DatabaseError as exc:
            logger.warning(f'Could not record artifact {path}: {exc}')

    def finish(self, exit_code, error=None):
        if self.run is None:
            return
        self.run.status = 'completed' if exit_code == 0 else 'failed'
        self.run.exit_code = exit_code
        self.run.error_message = str(error) if error else None
        self.run.completed_at = timezone.now()
        try:
            self.run.save()
        except DatabaseError as exc:
            logger.warning(f'Could not update run {self.run.pk}: {exc}')
