"""Exception hierarchy. UserError subclasses map to CLI exit code 1."""


class WcojError(Exception):
    pass


class UserError(WcojError):
    """Caller mistake: bad input file, bad SQL, unplannable query."""


class IngestError(UserError):
    pass


class SchemaError(UserError):
    pass


class ParseError(UserError):
    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, col {col})"
        super().__init__(message)


class PlanningError(UserError):
    pass


class ExecutionError(WcojError):
    pass
