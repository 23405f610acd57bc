"""Ground-truth corpus generator for the model-file security toolchain tests."""

__version__ = "0.1.0"
