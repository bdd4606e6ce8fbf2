# apps/runs/admin.py
from django.contrib import admin

from .models import Run, RunArtifact


class RunArtifactInline(admin.TabularInline):
    model = RunArtifact
    extra = 0
    readonly_fields = ['kind', 'path', 'size_bytes', 'sha256', 'created_at']


@admin.register(Run)
class RunAdmin(admin.ModelAdmin):
    """Admin interface for the run ledger"""
    list_display = [
        'command', 'config_hash_short', 'seed', 'status', 'exit_code', 'started_at', 'completed_at'
    ]
    list_filter = ['command', 'status', 'created_at']
    search_fields = ['config_hash', 'run_dir']
    date_hierarchy = 'created_at'
    readonly_fields = ['created_at', 'updated_at']
    inlines = [RunArtifactInline]

    fieldsets = (
        ('Run', {
            'fields': ('command', 'config_hash', 'seed', 'run_dir')
        }),
        ('Status', {
            'fields': ('status', 'exit_code', 'error_message', 'started_at', 'completed_at')
        }),
        ('Configuration', {
            'fields': ('parameters',),
            'classes': ('collapse',)
        }),
        ('Timestamps', {
            'fields': ('created_at', 'updated_at'),
            'classes': ('collapse',)
        }),
    )

    def config_hash_short(self, obj):
        return obj.config_hash[:12]
    config_hash_short.short_description = 'Config'


@admin.register(RunArtifact)
class RunArtifactAdmin(admin.ModelAdmin):
    list_display = ['path', 'kind', 'run', 'size_kb', 'created_at']
    list_filter = ['kind']
    search_fields = ['path', 'sha256']
