class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class InputError(ValueError):
    """Malformed model input (token ids, patch shapes, utterances)."""


class StateError(RuntimeError):
    """Operation attempted in the wrong lifecycle state (e.g. missing checkpoint)."""
