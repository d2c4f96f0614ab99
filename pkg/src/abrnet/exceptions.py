"""Exception types shared across the package."""


class ContractError(ValueError):
    """An input violated a function's documented preconditions."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericError(RuntimeError):
    """A loss became NaN or infinite during training."""

    def __init__(self, step, iteration, name, value):
        self.step = step
        self.iteration = iteration
        self.name = name
        self.value = value
        super().__init__(
            f"non-finite {name}={value!r} in {step} at iteration {iteration}"
        )


class CheckpointError(RuntimeError):
    """A checkpoint or dataset file could not be parsed or does not match."""


class LabelAccessError(PermissionError):
    """Labels were requested from a dataset opened in unlabeled mode."""
