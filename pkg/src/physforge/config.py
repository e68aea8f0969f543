"""Layered pipeline configuration: defaults < TOML file < environment < flags.

The effective config is fully serializable; its canonical-JSON hash is echoed
into every run manifest and report so outputs can be joined back to the exact
settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .errors import ConfigError

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class CurationConfig:
    conf_threshold: float = 0.5
    tail_boost: float = 2.0
    n_sample: int = 50
    blocklist_extra: tuple[str, ...] = ()
    ancestors_path: str = ""  # optional category-hierarchy JSON


@dataclass(frozen=True)
class RetrievalSettings:
    k: int = 5
    sim_floor: float = 0.60


@dataclass(frozen=True)
class OmniCapConfig:
    tau: float = 0.3
    base_fps: float = 1.0
    adaptive_rate: float = 1.0
    neighborhood_s: float = 1.0
    audio_window_s: float = 2.0
    audio_stride_s: float = 0.5
    k_sigma: float = 2.0


@dataclass(frozen=True)
class RouterConfig:
    tau: float = 0.5
    hidden_dim: int = 32
    lr: float = 0.5
    epochs: int = 400
    holdout_frac: float = 0.2
    params_path: str = ""  # empty -> bundled fixture params
    lexicon_dir: str = ""  # empty -> bundled lexicons


@dataclass(frozen=True)
class ClientsConfig:
    mock: bool = True
    mock_seed: int = 0
    embed_dim: int = 64
    endpoints: tuple[tuple[str, str], ...] = ()  # (role, url) pairs
    timeout_s: float = 10.0
    max_retries: int = 2
    max_in_flight: int = 4
    analogy_invalid_rate: float = 0.0  # mock reasoner: share of physics-violating replies


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    workers: int = 1  # stage-internal worker budget; outputs identical at any value
    prototypes_path: str = ""  # empty -> bundled DB
    curation: CurationConfig = field(default_factory=CurationConfig)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    omnicap: OmniCapConfig = field(default_factory=OmniCapConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    clients: ClientsConfig = field(default_factory=ClientsConfig)

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["schema_version"] = SCHEMA_VERSION
        return payload

    def config_hash(self) -> str:
        # workers is an execution knob: outputs are identical at any value,
        # so it must not perturb the hash that identifies a run's settings
        payload = self.to_dict()
        payload.pop("workers")
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


_SECTIONS = {
    "curation": CurationConfig,
    "retrieval": RetrievalSettings,
    "omnicap": OmniCapConfig,
    "router": RouterConfig,
    "clients": ClientsConfig,
}


def _coerce(section_cls, raw: Mapping[str, Any]):
    known = {f.name: f for f in fields(section_cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {section_cls.__name__}.{key}")
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    return section_cls(**kwargs)


def load_config(
    file_path: Optional[str | Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> PipelineConfig:
    """Build the effective config.

    ``overrides`` uses dotted keys ("omnicap.tau") and wins over both the
    file and the environment.  FORGE_MOCK=1 forces mock clients; a
    FORGE_<ROLE>_URL both registers the endpoint and (absent FORGE_MOCK)
    switches that run to live mode.
    """
    env = os.environ if env is None else env
    layered: dict[str, Any] = {}
    if file_path:
        path = Path(file_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            layered = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc

    sections = {}
    for name, cls in _SECTIONS.items():
        raw = layered.get(name, {})
        if not isinstance(raw, Mapping):
            raise ConfigError(f"config section [{name}] must be a table")
        sections[name] = _coerce(cls, raw)

    top = {k: v for k, v in layered.items() if k not in _SECTIONS}
    for key in top:
        if key not in ("seed", "workers", "prototypes_path"):
            raise ConfigError(f"unknown top-level config key {key!r}")

    cfg = PipelineConfig(
        seed=int(top.get("seed", 0)),
        workers=int(top.get("workers", 1)),
        prototypes_path=str(top.get("prototypes_path", "")),
        **sections,
    )

    endpoints = dict(cfg.clients.endpoints)
    from .clients import ROLES

    for role in ROLES:
        url = env.get(f"FORGE_{role.upper()}_URL")
        if url:
            endpoints[role] = url
    mock = cfg.clients.mock
    if endpoints and env.get("FORGE_MOCK", "") != "1":
        mock = cfg.clients.mock and not any(
            env.get(f"FORGE_{role.upper()}_URL") for role in ROLES
        )
    if env.get("FORGE_MOCK", "") == "1":
        mock = True
    cfg = replace(
        cfg,
        clients=replace(cfg.clients, mock=mock, endpoints=tuple(sorted(endpoints.items()))),
    )

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        cfg = _apply_override(cfg, dotted, value)
    return cfg


def _apply_override(cfg: PipelineConfig, dotted: str, value: Any) -> PipelineConfig:
    parts = dotted.split(".")
    if len(parts) == 1:
        if parts[0] not in ("seed", "workers", "prototypes_path"):
            raise ConfigError(f"unknown config key {dotted!r}")
        return replace(cfg, **{parts[0]: value})
    if len(parts) != 2 or parts[0] not in _SECTIONS:
        raise ConfigError(f"unknown config key {dotted!r}")
    section = getattr(cfg, parts[0])
    if parts[1] not in {f.name for f in fields(section)}:
        raise ConfigError(f"unknown config key {dotted!r}")
    return replace(cfg, **{parts[0]: replace(section, **{parts[1]: value})})
