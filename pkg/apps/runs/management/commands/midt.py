# apps/runs/management/commands/midt.py
from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import MidtError
from apps.runs.services import COMMANDS, PipelineService, exit_code_for


class Command(BaseCommand):
    help = 'Run one step of the quasi-ECG synthesis and evaluation pipeline'

    def add_arguments(self, parser):
        parser.add_argument('command', choices=COMMANDS)
        parser.add_argument('--config', required=True, help='JSON run configuration')
        parser.add_argument('--out', default=None, help='run directory (default <runs_dir>/<hash[:12]>)')
        parser.add_argument('--seed', type=int, default=None, help='override the top-level seed')
        parser.add_argument('--index', type=int, default=0, help='record index for the export commands')
        parser.add_argument('--lead', type=int, default=0, help='lead index for spectro-dump')
        parser.add_argument(
            '--dataset', choices=('real', 'synthetic'), default='real',
            help='record source for export-record and spectro-dump',
        )

    def handle(self, *args, **options):
        try:
            run_dir = PipelineService.run(
                options['command'],
                options['config'],
                out=options['out'],
                seed=options['seed'],
                index=options['index'],
                lead=options['lead'],
                dataset=options['dataset'],
            )
        except (MidtError, FileNotFoundError) as exc:
            raise CommandError(str(exc), returncode=exit_code_for(exc)) from exc
        self.stdout.write(self.style.SUCCESS(f"{options['command']} done: {run_dir}"))
