# apps/runs/models.py
from django.db import models


class Run(models.Model):
    """One invocation of a pipeline command"""
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    command = models.CharField(max_length=40)
    config_hash = models.CharField(max_length=64)
    seed = models.BigIntegerField(default=0)

    # Output
    run_dir = models.CharField(max_length=500)
    parameters = models.JSONField(
        default=dict,
        help_text="Validated run configuration"
    )

    # Status
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='pending')
    exit_code = models.IntegerField(blank=True, null=True)
    error_message = models.TextField(blank=True, null=True)

    started_at = models.DateTimeField(blank=True, null=True)
    completed_at = models.DateTimeField(blank=True, null=True)

    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        indexes = [
            models.Index(fields=['config_hash'], name='run_config_hash_idx'),
            models.Index(fields=['command', 'status'], name='run_command_status_idx'),
        ]
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.command} {self.config_hash[:12]} ({self.status})"

    @property
    def duration(self):
        """Seconds between start and completion"""
        if self.started_at and self.completed_at:
            return (self.completed_at - self.started_at).total_seconds()
        return None


class RunArtifact(models.Model):
    """A file written by a run"""
    KIND_CHOICES = [
        ('dataset', 'Dataset'),
        ('checkpoint', 'Checkpoint'),
        ('trace', 'Loss Trace'),
        ('report', 'Report'),
        ('table', 'Table'),
        ('export', 'Export'),
    ]

    run = models.ForeignKey(Run, on_delete=models.CASCADE, related_name='artifacts')
    kind = models.CharField(max_length=20, choices=KIND_CHOICES)
    path = models.CharField(max_length=500)
    size_bytes = models.PositiveBigIntegerField(default=0)
    sha256 = models.CharField(max_length=64)

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['run', 'path']

    def __str__(self):
        return f"{self.kind}: {self.path}"

    @property
    def size_kb(self):
        return round(self.size_bytes / 1024, 1)
