"""Layered configuration for the daemons.

Each daemon describes its settings as a dataclass. Values are resolved as
defaults < JSON config file < environment (``<PREFIX>_<FIELD>``) < flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import types
import typing
from typing import Any, Mapping, TypeVar

T = TypeVar("T")


def _coerce(kind: Any, raw: Any) -> Any:
    if raw is None:
        return None
    origin = typing.get_origin(kind)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(kind) if a is not type(None)]
        if raw == "" or raw == "none":
            return None
        return _coerce(args[0], raw)
    if kind is bool:
        if isinstance(raw, str):
            return raw.lower() in ("1", "true", "yes", "on")
        return bool(raw)
    if kind in (int, float, str):
        return kind(raw)
    return raw


def add_dataclass_flags(parser: argparse.ArgumentParser, cls: type) -> None:
    # flags stay strings here; resolve() coerces them with the field types
    for f in dataclasses.fields(cls):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper(),
                            help=f"(default: {f.default!r})")
    parser.add_argument("--config", default=None, help="JSON file with any of the settings")


def resolve(cls: type[T], args: argparse.Namespace | None = None,
            env: Mapping[str, str] | None = None, prefix: str = "BANK") -> T:
    hints = typing.get_type_hints(cls)
    env = os.environ if env is None else env
    values: dict[str, Any] = {}
    cfg_file = getattr(args, "config", None) if args is not None else None
    if cfg_file:
        with open(cfg_file, encoding="utf-8") as fh:
            data = json.load(fh)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown settings in {cfg_file}: {sorted(unknown)}")
        values.update(data)
    for f in dataclasses.fields(cls):
        key = f"{prefix}_{f.name.upper()}"
        if key in env:
            values[f.name] = env[key]
        if args is not None and getattr(args, f.name, None) is not None:
            values[f.name] = getattr(args, f.name)
    return cls(**{k: _coerce(hints[k], v) for k, v in values.items()})
