"""Run configuration: one flat INI-style file with a section per subsystem.

Everything has a default except the data paths, so a minimal config is just

    [data]
    train_csv = data/diabetes.csv
    schema = data/diabetes.schema.json
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .anchors import AnchorConfig
from .discovery import DiscoveryConfig
from .mixture import DbgdConfig, SgdConfig
from .refiner import LlmClientConfig

REFINER_KINDS = ("stub", "remote", "none")


class ConfigError(ValueError):
    """The configuration file is missing, malformed, or inconsistent."""


@dataclass
class RunConfig:
    train_csv: str
    schema_path: str
    test_fraction: float = 0.2
    hidden: tuple[int, ...] = (50, 50)
    init: SgdConfig = field(default_factory=SgdConfig)
    dbgd: DbgdConfig = field(default_factory=DbgdConfig)
    anchor: AnchorConfig = field(default_factory=AnchorConfig)
    n_bins: int = 4
    iterations: int = 3
    b_exploit: int = 4
    b_explore: int = 4
    refiner_kind: str = "stub"
    llm: LlmClientConfig = field(default_factory=LlmClientConfig)
    fallback_unrefined: bool = False
    seed: int = 0
    output_dir: str = "run_output"

    def discovery_config(self) -> DiscoveryConfig:
        return DiscoveryConfig(
            iterations=self.iterations,
            b_exploit=self.b_exploit,
            b_explore=self.b_explore,
            hidden=self.hidden,
            n_bins=self.n_bins,
            seed=self.seed,
            anchor=self.anchor,
            dbgd=self.dbgd,
            init=self.init,
        )


def _getter(parser: configparser.ConfigParser, cast, section: str, key: str, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        if cast is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot interpret {raw!r}") from None


def _parse_hidden(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(tok.strip()) for tok in raw.split(","))


def load_run_config(path) -> RunConfig:
    """Parse and validate a config file; any problem raises ConfigError."""
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None

    if not parser.has_option("data", "train_csv") or not parser.has_option("data", "schema"):
        raise ConfigError("[data] must define train_csv and schema")

    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        cfg = RunConfig(
            train_csv=resolve(parser.get("data", "train_csv")),
            schema_path=resolve(parser.get("data", "schema")),
            test_fraction=_getter(parser, float, "data", "test_fraction", 0.2),
            hidden=_getter(parser, _parse_hidden, "model", "hidden", (50, 50)),
            init=SgdConfig(
                epochs=_getter(parser, int, "init", "epochs", 150),
                eta=_getter(parser, float, "init", "eta", 0.05),
                batch_size=_getter(parser, int, "init", "batch_size", 32),
            ),
            dbgd=DbgdConfig(
                epsilon=_getter(parser, float, "dbgd", "epsilon", 0.1),
                alpha=_getter(parser, float, "dbgd", "alpha", 1.0),
                beta=_getter(parser, float, "dbgd", "beta", 1.0),
                eta=_getter(parser, float, "dbgd", "eta", 0.05),
                epochs=_getter(parser, int, "dbgd", "epochs", 30),
                batch_size=_getter(parser, int, "dbgd", "batch_size", 32),
                delta=_getter(parser, float, "dbgd", "delta", 1e-12),
            ),
            anchor=AnchorConfig(
                tau=_getter(parser, float, "anchor", "tau", 0.90),
                n_samples=_getter(parser, int, "anchor", "n_samples", 2000),
                max_predicates=_getter(parser, int, "anchor", "max_predicates", 0) or None,
                seed=_getter(parser, int, "run", "seed", 0),
            ),
            n_bins=_getter(parser, int, "anchor", "n_bins", 4),
            iterations=_getter(parser, int, "discovery", "iterations", 3),
            b_exploit=_getter(parser, int, "discovery", "b_exploit", 4),
            b_explore=_getter(parser, int, "discovery", "b_explore", 4),
            refiner_kind=_getter(parser, str, "refiner", "kind", "stub").strip().lower(),
            llm=LlmClientConfig(
                endpoint=_getter(
                    parser, str, "refiner", "endpoint", LlmClientConfig.endpoint
                ),
                model=_getter(parser, str, "refiner", "model", LlmClientConfig.model),
                api_key_env=_getter(
                    parser, str, "refiner", "api_key_env", LlmClientConfig.api_key_env
                ),
                timeout_s=_getter(parser, float, "refiner", "timeout_s", 60.0),
                max_retries=_getter(parser, int, "refiner", "max_retries", 2),
                temperature=_getter(parser, float, "refiner", "temperature", 0.0),
            ),
            fallback_unrefined=_getter(parser, bool, "refiner", "fallback_unrefined", False),
            seed=_getter(parser, int, "run", "seed", 0),
            output_dir=resolve(_getter(parser, str, "run", "output_dir", "run_output")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    if cfg.refiner_kind not in REFINER_KINDS:
        raise ConfigError(f"refiner kind must be one of {REFINER_KINDS}, got {cfg.refiner_kind!r}")
    if not 0.0 < cfg.test_fraction < 1.0:
        raise ConfigError("test_fraction must lie strictly between 0 and 1")
    for p, label in ((cfg.train_csv, "train_csv"), (cfg.schema_path, "schema")):
        if not os.path.exists(p):
            raise ConfigError(f"{label} path {p!r} does not exist")
    return cfg
