"""
Exceptions shared by every module.
Library code raises these; only cli.py catches them and picks an exit code.
"""


class VegasError(Exception):
    """Base for everything this package raises on purpose."""


class DomainError(VegasError, ValueError):
    """Invalid distribution parameters or non-finite inputs."""


class ConfigError(VegasError):
    """Bad config file, bad flag, or an impossible setting."""


class ShapeError(VegasError, ValueError):
    """Frames or arrays whose dimensions don't line up."""


class IngestionError(VegasError):
    """A frame directory that can't be turned into a video."""


class CheckpointError(VegasError):
    """Corrupt, truncated or unsupported checkpoint file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class EditError(VegasError):
    """An edit that can't be applied: degenerate face, singular matrix, bad script."""

    def __init__(self, message, component_id=None, op_index=None):
        if op_index is not None:
            message = f"op {op_index}: {message}"
        if component_id is not None:
            message = f"{message} (component {component_id})"
        super().__init__(message)
        self.component_id = component_id
        self.op_index = op_index


class TrainingDivergedError(VegasError):
    """Non-finite loss or gradient during training."""

    def __init__(self, step, frame_index, param_norms):
        norms = ", ".join(f"{k}={v:.3g}" for k, v in param_norms.items())
        super().__init__(f"non-finite loss at step {step}, frame {frame_index}; norms: {norms}")
        self.step = step
        self.frame_index = frame_index
        self.param_norms = param_norms
