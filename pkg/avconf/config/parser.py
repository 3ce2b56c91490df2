"""
Config text parser.

Config files are line oriented::

    seed = 0                       # top-level keys come before any section
    [model]
    kind = audio
    [model.audio]
    blocks_per_stage = 5, 6, 1     # comma-separated values become lists
    interctc_blocks = [8, 11]

Values are typed as bool (``true``/``false``), ``none``, int, float (``inf`` and ``-inf``
included), quoted or bare strings, or lists of those. ``[]`` is the empty list.
"""

import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from avconf.core.errors import ConfigError

_SECTION = re.compile(r"\[\s*([A-Za-z_]\w*(?:\.[A-Za-z_]\w*)*)\s*\]$")
_ASSIGN = re.compile(r"([A-Za-z_]\w*)\s*=\s*(.*)$")

KeyPath = Tuple[str, ...]


class ParsedConfig:
    """Nested dict of values plus the source line of every section and key."""

    def __init__(self, data: Dict[str, Any], lines: Dict[KeyPath, int], source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def line_of(self, path: KeyPath) -> Optional[int]:
        """Line of the longest prefix of ``path`` that was written in the file."""
        for end in range(len(path), 0, -1):
            line = self.lines.get(tuple(path[:end]))
            if line is not None:
                return line
        return None


def parse(text: str, source: str = "<string>") -> ParsedConfig:
    """
    Parse config text.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Parsed values with line numbers

    Raises:
        ConfigError: malformed line, repeated section or repeated key
    """
    return ConfigParser(source).parse(text)


def parse_file(path: Union[str, Path]) -> ParsedConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse(path.read_text(), str(path))


class ConfigParser:
    """Parser for the line-oriented config format."""

    def __init__(self, source: str = "<string>"):
        self.source = source
        self.data: Dict[str, Any] = {}
        self.lines: Dict[KeyPath, int] = {}
        self.section: KeyPath = ()

    def parse(self, text: str) -> ParsedConfig:
        for number, raw in enumerate(text.splitlines(), start=1):
            line = _strip_comment(raw).strip()
            if line:
                self._parse_line(line, number)
        return ParsedConfig(self.data, self.lines, self.source)

    def _error(self, message: str, number: int) -> ConfigError:
        return ConfigError(f"{self.source}: {message}", line=number)

    def _table(self, path: KeyPath, number: int) -> Dict[str, Any]:
        table = self.data
        for depth, name in enumerate(path):
            value = table.setdefault(name, {})
            if not isinstance(value, dict):
                name = ".".join(path[: depth + 1])
                raise self._error(f"'{name}' is a value, not a section", number)
            table = value
        return table

    def _parse_line(self, line: str, number: int) -> None:
        if line.startswith("["):
            match = _SECTION.match(line)
            if not match:
                raise self._error(f"malformed section header {line!r}", number)
            path = tuple(match.group(1).split("."))
            if path in self.lines:
                raise self._error(
                    f"section [{match.group(1)}] repeats line {self.lines[path]}", number
                )
            self._table(path, number)
            self.lines[path] = number
            self.section = path
            return

        match = _ASSIGN.match(line)
        if not match:
            raise self._error(f"expected 'key = value' or '[section]', got {line!r}", number)
        key, raw = match.group(1), match.group(2).strip()
        path = self.section + (key,)
        if path in self.lines:
            raise self._error(f"key '{'.'.join(path)}' repeats line {self.lines[path]}", number)
        table = self._table(self.section, number)
        if isinstance(table.get(key), dict):
            raise self._error(f"'{'.'.join(path)}' is already a section", number)
        try:
            table[key] = parse_value(raw)
        except ValueError as e:
            raise self._error(f"{key}: {e}", number) from e
        self.lines[path] = number


def _strip_comment(line: str) -> str:
    """Drop a ``#`` comment that is not inside double quotes."""
    quoted = False
    for i, char in enumerate(line):
        if char == '"':
            quoted = not quoted
        elif char == "#" and not quoted:
            return line[:i]
    return line


def _scalar(token: str) -> Any:
    token = token.strip()
    if not token:
        raise ValueError("empty value")
    if len(token) >= 2 and token[0] == token[-1] == '"':
        return token[1:-1]
    lowered = token.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    if '"' in token:
        raise ValueError(f"unbalanced quotes in {token!r}")
    return token


def _split(raw: str) -> List[str]:
    parts, current, quoted = [], [], False
    for char in raw:
        if char == '"':
            quoted = not quoted
        if char == "," and not quoted:
            parts.append("".join(current))
            current = []
        else:
            current.append(char)
    parts.append("".join(current))
    return parts


def parse_value(raw: str) -> Any:
    """
    Type one value.

    ``a, b`` and ``[a, b]`` are lists; a trailing comma (``8,``) makes a one-element list.

    Raises:
        ValueError: empty value or list element
    """
    raw = raw.strip()
    bracketed = raw.startswith("[") and raw.endswith("]")
    if bracketed:
        raw = raw[1:-1].strip()
        if not raw:
            return []
    parts = _split(raw)
    if len(parts) == 1 and not bracketed:
        return _scalar(parts[0])
    if parts[-1].strip() == "":
        parts = parts[:-1]
    return [_scalar(p) for p in parts]
