# apps/core/exceptions.py


class MidtError(Exception):
    """Root of every domain error raised by the midt apps"""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        return self.args[0] if self.args else self.__class__.__name__
