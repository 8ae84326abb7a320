"""Exception hierarchy shared by the toolchain.

The CLI maps each class to a fixed exit code, see ``tarl.cli.EXIT_CODES``.
"""


class TarlError(Exception):
    pass


class ParseError(TarlError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class AnalysisError(TarlError):
    pass


class NoFlowError(AnalysisError):
    pass


class InstrumentError(TarlError):
    pass


class RuntimeFault(TarlError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class DivergenceFault(RuntimeFault):
    pass


class NoVerdict(RuntimeFault):
    pass


class InsufficientHistory(TarlError):
    pass


class FormatError(TarlError):
    pass


class ShapeError(TarlError):
    pass


class DegenerateError(TarlError):
    pass


class NoConstantsError(TarlError):
    pass


class NameCollisionError(TarlError):
    pass


class InsufficientDataError(TarlError):
    pass
