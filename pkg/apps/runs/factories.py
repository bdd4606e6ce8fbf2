# apps/runs/factories.py
import factory
from django.utils import timezone

from apps.runs.models import Run, RunArtifact


class RunFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = Run

    command = 'train'
    config_hash = factory.Sequence(lambda n: f'{n:064x}')
    seed = 7
    run_dir = factory.LazyAttribute(lambda o: f'runs/{o.config_hash[:12]}')
    parameters = factory.LazyFunction(lambda: {'seed': 7})
    status = 'running'
    started_at = factory.LazyFunction(timezone.now)


class RunArtifactFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = RunArtifact

    run = factory.SubFactory(RunFactory)
    kind = 'checkpoint'
    path = factory.Sequence(lambda n: f'checkpoints/model_{n}.json')
    size_bytes = 2048
    sha256 = '0' * 64
