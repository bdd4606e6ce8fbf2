# apps/diffusion/exceptions.py
from apps.core.exceptions import MidtError


class ScheduleError(MidtError):
    """Invalid noise schedule or diffusion step"""


class TrainingError(MidtError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, step, value=None):
        self.step = step
        super().__init__(f'non-finite loss at step {step}: {value}', step=step)
