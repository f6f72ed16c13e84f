"""Server configuration: file-based (TOML or JSON) with environment overrides.

Environment variables, applied after the file:
  FLAAS_LISTEN       host:port to bind (e.g. 0.0.0.0:8400)
  FLAAS_DATA_DIR     directory for durable job state
  FLAAS_PAYLOAD_CAP  maximum accepted update body size in bytes
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .errors import ConfigurationError

try:
    import tomllib  # noqa: F401  (3.11+)
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

DEFAULT_PORT = 8400
DEFAULT_PAYLOAD_CAP = 1_048_576


@dataclass(frozen=True)
class TokenEntry:
    """One static bearer token. Devices carry the integer id used by client
    selection; customers drive jobs and read metrics."""

    token: str
    role: str
    device_id: int | None = None

    def __post_init__(self):
        if self.role not in ("customer", "device"):
            raise ConfigurationError(f"token role must be customer or device, got {self.role!r}")
        if self.role == "device" and self.device_id is None:
            raise ConfigurationError("device tokens need a device_id")
        if not self.token:
            raise ConfigurationError("empty token")


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    data_dir: str | None = None
    payload_cap: int = DEFAULT_PAYLOAD_CAP
    tokens: tuple[TokenEntry, ...] = ()
    static_dir: str | None = None

    def device_ids(self) -> list[int]:
        return sorted({t.device_id for t in self.tokens if t.role == "device"})

    def lookup(self, token: str) -> TokenEntry | None:
        for entry in self.tokens:
            if entry.token == token:
                return entry
        return None


def _parse_listen(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not host:
        raise ConfigurationError(f"listen address must be host:port, got {value!r}")
    try:
        return host, int(port)
    except ValueError as exc:
        raise ConfigurationError(f"bad port in listen address {value!r}") from exc


def load_server_config(path: str | None = None, env: dict | None = None) -> ServerConfig:
    """Read an optional config file, then apply environment overrides."""
    env = os.environ if env is None else env
    raw: dict = {}
    if path is not None:
        try:
            if path.endswith(".toml"):
                with open(path, "rb") as fh:
                    raw = tomllib.load(fh)
            elif path.endswith(".json"):
                with open(path, encoding="utf-8") as fh:
                    raw = json.load(fh)
            else:
                raise ConfigurationError(f"config file must be .toml or .json: {path!r}")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path!r}: {exc}") from exc
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot parse config file {path!r}: {exc}") from exc

    try:
        host = str(raw.get("host", "127.0.0.1"))
        port = int(raw.get("port", DEFAULT_PORT))
        data_dir = raw.get("data_dir")
        payload_cap = int(raw.get("payload_cap", DEFAULT_PAYLOAD_CAP))
        static_dir = raw.get("static_dir")
        tokens = tuple(
            TokenEntry(
                token=str(item["token"]),
                role=str(item["role"]),
                device_id=int(item["device_id"]) if "device_id" in item else None,
            )
            for item in raw.get("tokens", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed server config: {exc}") from exc

    if "FLAAS_LISTEN" in env:
        host, port = _parse_listen(env["FLAAS_LISTEN"])
    if "FLAAS_DATA_DIR" in env:
        data_dir = env["FLAAS_DATA_DIR"]
    if "FLAAS_PAYLOAD_CAP" in env:
        try:
            payload_cap = int(env["FLAAS_PAYLOAD_CAP"])
        except ValueError as exc:
            raise ConfigurationError("FLAAS_PAYLOAD_CAP must be an integer") from exc
    if payload_cap < 1:
        raise ConfigurationError("payload_cap must be >= 1")

    return ServerConfig(
        host=host,
        port=port,
        data_dir=str(data_dir) if data_dir is not None else None,
        payload_cap=payload_cap,
        tokens=tokens,
        static_dir=str(static_dir) if static_dir is not None else None,
    )
