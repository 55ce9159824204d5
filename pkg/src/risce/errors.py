"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Invalid experiment or training configuration."""


class EstimationError(RuntimeError):
    """An estimator could not produce a usable result (degenerate input,
    missing subspace separation, too few candidate roots)."""
