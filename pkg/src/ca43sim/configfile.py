"""YAML loading that remembers where every key came from.

Both the constants file and the experiment config are YAML documents.  The
loader walks the composed node graph so validation errors can quote the line
of the offending entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import re
from pathlib import Path

import yaml

from .errors import ConfigError


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e6``-style floats (YAML 1.2 rule)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


@dataclass
class Document:
    data: dict
    lines: dict = field(default_factory=dict)
    path: str | None = None

    def line_of(self, *keys):
        """Line of the deepest known prefix of ``keys`` (1-based)."""
        for n in range(len(keys), 0, -1):
            if keys[:n] in self.lines:
                return self.lines[keys[:n]]
        return None

    def error(self, message, *keys):
        return ConfigError(message, line=self.line_of(*keys), path=self.path)


def _convert(node, prefix, lines):
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            if key in out:
                raise ConfigError(f"duplicate key '{key}'", line=key_node.start_mark.line + 1)
            lines[prefix + (key,)] = key_node.start_mark.line + 1
            out[key] = _convert(value_node, prefix + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_convert(v, prefix + (i,), lines) for i, v in enumerate(node.value)]
    return _scalar(node)


def _scalar(node):
    loader = _Loader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def loads(text: str, path: str | None = None) -> Document:
    try:
        root = yaml.compose(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", line=line, path=path) from None
    if root is None:
        return Document({}, {}, path)
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("top level must be a mapping", line=root.start_mark.line + 1, path=path)
    lines: dict = {}
    try:
        data = _convert(root, (), lines)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], line=exc.line, path=path) from None
    return Document(data, lines, path)


def load(path) -> Document:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc.strerror}", path=str(path)) from None
    return loads(text, str(path))
