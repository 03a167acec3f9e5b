"""
Gateway configuration: one YAML file plus environment overrides.

The MAC salt is deliberately environment-only (HEARTHGATE_SALT): it must
never sit in a config file next to the database it protects.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

import yaml

ENV_PREFIX = "HEARTHGATE_"

DEFAULT_PORT = 8799


@dataclass
class AppConfig:
    host: str = "127.0.0.1"  # loopback/LAN appliance; no remote exposure
    port: int = DEFAULT_PORT
    db_path: str = "hearthgate.db"
    salt: bytes = b""
    admin_token: str | None = None
    fixture_path: str | None = None
    home_region: str = "EU"
    initial_stage: int = 1
    coalesce_window_ms: int = 60_000
    bucket_width_ms: int = 60_000
    include_inbound: bool = False
    retention_days: int = 42
    static_dir: str | None = None  # built dashboard assets, if any

    def require_salt(self) -> bytes:
        if not self.salt:
            raise ValueError(
                "no MAC salt configured; set HEARTHGATE_SALT (device ids "
                "must be stable across restarts, so it cannot be generated)"
            )
        return self.salt


_ENV_KEYS = {
    "HOST": ("host", str),
    "PORT": ("port", int),
    "DB": ("db_path", str),
    "ADMIN_TOKEN": ("admin_token", str),
    "FIXTURES": ("fixture_path", str),
    "HOME_REGION": ("home_region", str),
    "STAGE": ("initial_stage", int),
    "COALESCE_MS": ("coalesce_window_ms", int),
    "BUCKET_MS": ("bucket_width_ms", int),
    "STATIC_DIR": ("static_dir", str),
}


def load_config(path: str | None = None, env: dict[str, str] | None = None) -> AppConfig:
    """Config file values first, then HEARTHGATE_* environment overrides."""
    env = dict(os.environ if env is None else env)
    values: dict = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"config file {path} must be a mapping")
        known = {f.name for f in fields(AppConfig)}
        for key, value in raw.items():
            if key == "salt":
                raise ValueError("salt must come from the environment, not the config file")
            if key not in known:
                raise ValueError(f"unknown config key: {key}")
            values[key] = value
    for env_key, (attr, cast) in _ENV_KEYS.items():
        raw_value = env.get(ENV_PREFIX + env_key)
        if raw_value is not None:
            values[attr] = cast(raw_value)
    salt = env.get(ENV_PREFIX + "SALT")
    if salt:
        values["salt"] = salt.encode("utf-8")
    return AppConfig(**values)
