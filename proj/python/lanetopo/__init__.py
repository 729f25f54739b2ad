"""Python interface to the lanetopo C++ core."""

from _lanetopo import (  # noqa: F401
    ConfigError,
    InputError,
    average_precision,
    ddt_classes,
    evaluate,
    frechet,
    generate,
    generate_scene,
    geometric_prior,
    gradcheck,
    hungarian,
    normalize_config,
    train,
)

__all__ = [
    "ConfigError",
    "InputError",
    "average_precision",
    "ddt_classes",
    "evaluate",
    "frechet",
    "generate",
    "generate_scene",
    "geometric_prior",
    "gradcheck",
    "hungarian",
    "normalize_config",
    "train",
]
