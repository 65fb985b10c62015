"""Pipeline configuration: a flat ``key = value`` file overridden by command-line flags.

Recognised keys (all optional)::

    seed            integer seed for every randomized verb        (0)
    task            TaskSpec string, e.g. full or sentence:fluency  (full)
    target          perturbation target granularity.aspect        (sentence.accuracy)
    delta_min       smallest perturbation magnitude               (2)
    delta_max       largest perturbation magnitude                (4)
    direction       random | up | down                            (random)
    scope           one | all                                     (one)
    positive_mode   gold | updown                                 (gold)
    beta            SimPO sharpness                               (0.1)
    gamma           SimPO reward margin                           (0.5)
    lambda          cross-entropy weight                          (0.1)
    base_url        scoring endpoint URL
    token_env       env var holding the bearer token              (APAKIT_API_TOKEN)
    timeout         request timeout, seconds                      (60)
    max_retries     retries after the first attempt               (3)
    backoff         first retry delay, seconds; doubles each time (0.5)
    rps             request-rate cap                              (2)
    max_in_flight   concurrent requests                           (4)
    response_field  dotted path of the text in the response JSON  (text)
    phone_rmse_scale  0-2 | 0-10                                  (0-2)
    corpus_root     raw corpus directory for ingest
    output_dir      default output directory                      (out)

Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .client import EndpointConfig
from .errors import ApaError
from .prefsim import PerturbConfig
from .promptgen import TaskSpec
from .simpo import SimpoConfig


class ConfigFileError(ApaError):
    module = "config"


KEYS = {
    "seed": int, "task": str, "target": str, "delta_min": float, "delta_max": float,
    "direction": str, "scope": str, "positive_mode": str,
    "beta": float, "gamma": float, "lambda": float,
    "base_url": str, "token_env": str, "timeout": float, "max_retries": int, "backoff": float,
    "rps": float, "max_in_flight": int, "response_field": str,
    "phone_rmse_scale": str, "corpus_root": str, "output_dir": str,
}


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string("[apakit]\n" + path.read_text(encoding="utf-8"))
    except configparser.Error as e:
        raise ConfigFileError(f"{path}: {e}") from None
    out = {}
    for key, raw in cp["apakit"].items():
        if key not in KEYS:
            raise ConfigFileError(f"{path}: unknown key {key!r}")
        try:
            out[key] = KEYS[key](raw.strip())
        except ValueError:
            raise ConfigFileError(f"{path}: bad value for {key}: {raw!r}") from None
    return out


@dataclass
class PipelineConfig:
    task: TaskSpec = field(default_factory=TaskSpec.full)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    simpo: SimpoConfig = field(default_factory=SimpoConfig)
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    corpus_root: Optional[str] = None
    output_dir: str = "out"
    seed: int = 0
    phone_rmse_scale: str = "0-2"

    @classmethod
    def from_values(cls, values: dict) -> "PipelineConfig":
        """Build from merged config-file and flag values (flags already applied)."""
        seed = int(values.get("seed", 0))
        target = values.get("target", "sentence.accuracy")
        gran, _, aspect = target.partition(".")
        perturb = PerturbConfig(
            target=(gran, aspect),
            delta_min=float(values.get("delta_min", 2.0)),
            delta_max=float(values.get("delta_max", 4.0)),
            direction=values.get("direction", "random"),
            seed=seed,
            scope=values.get("scope", "one"),
            positive_mode=values.get("positive_mode", "gold"),
        )
        simpo = SimpoConfig(values.get("beta", 0.1), values.get("gamma", 0.5), values.get("lambda", 0.1))
        ep_keys = ("base_url", "token_env", "timeout", "max_retries", "backoff", "rps", "max_in_flight",
                   "response_field")
        endpoint = EndpointConfig(**{k: values[k] for k in ep_keys if k in values})
        scale = values.get("phone_rmse_scale", "0-2")
        if scale not in ("0-2", "0-10"):
            raise ConfigFileError(f"phone_rmse_scale must be 0-2 or 0-10, got {scale!r}")
        return cls(
            task=TaskSpec.parse(values.get("task", "full")),
            perturb=perturb, simpo=simpo, endpoint=endpoint,
            corpus_root=values.get("corpus_root"),
            output_dir=values.get("output_dir", "out"),
            seed=seed, phone_rmse_scale=scale,
        )
