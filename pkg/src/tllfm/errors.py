"""Exception types. Each carries the CLI exit code for its category."""


class TLLFMError(Exception):
    exit_code = 1


class DataError(TLLFMError, ValueError):
    """Invalid input data or file contents.

    ``problems`` holds one human-readable entry per violating cell or column.
    """

    exit_code = 2

    def __init__(self, message, problems=None):
        self.problems = list(problems or [])
        if self.problems:
            shown = "\n  ".join(self.problems[:50])
            more = len(self.problems) - 50
            if more > 0:
                shown += f"\n  ... and {more} more"
            message = f"{message}:\n  {shown}"
        super().__init__(message)


class SchemaError(DataError):
    """Columns of the data do not match the schema a model was trained on."""


class NumericalError(TLLFMError, ArithmeticError):
    exit_code = 3


class ConvergenceError(NumericalError):
    def __init__(self, message, grad_norm=float("nan")):
        self.grad_norm = grad_norm
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
