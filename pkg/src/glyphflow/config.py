"""Flat key = value config files: one pair per line, ``#`` comments."""

from __future__ import annotations

from .errors import ConfigError


def parse_kv_text(text: str, source: str = "<config>") -> list[tuple[int, str, str]]:
    """Parse to (line number, key, value) triples; malformed lines raise."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out.append((lineno, key, value))
    return out


def read_kv_file(path: str) -> list[tuple[int, str, str]]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_kv_text(f.read(), source=path)


def write_kv_file(path: str, pairs: dict[str, object]) -> None:
    lines = [f"{k} = {v}" for k, v in pairs.items()]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
