from __future__ import annotations


class RepeaterError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(RepeaterError):
    def __init__(self, message: str, *, key: str | None = None, line: int | None = None):
        self.message = message
        self.key = key
        self.line = line
        location = []
        if line is not None:
            location.append(f"ligne {line}")
        if key:
            location.append(f"clé '{key}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")


class CausalityError(RepeaterError):
    pass


class QuantumStateError(RepeaterError):
    pass


class FabricError(RepeaterError):
    pass


class ProtocolError(RepeaterError):
    pass


class SimulationError(RepeaterError):
    def __init__(self, message: str, *, run_index: int | None = None):
        self.run_index = run_index
        if run_index is not None:
            message = f"run {run_index}: {message}"
        super().__init__(message)


class SweepAborted(RepeaterError):
    def __init__(self, message: str, *, partial_csv: str):
        self.partial_csv = partial_csv
        super().__init__(message)


class OracleError(RepeaterError):
    pass


class PlotError(RepeaterError):
    pass


class CsvSchemaError(RepeaterError):
    pass
