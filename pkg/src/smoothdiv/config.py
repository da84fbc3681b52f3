"""YAML configuration files.

A config is a mapping with a ``measure`` entry (see
:func:`smoothdiv.measures.spec_from_dict`) and optional run settings::

    measure:
      variant: gaussian
      mean: [0.0]
      covariance: [[0.25]]
    sigma: 1.0
    n_grid: [50, 500, 5000]
    reps: 500

A file holding only a measure mapping (with a top-level ``variant``) is also
accepted.
"""

from __future__ import annotations

from pathlib import Path

import yaml

from .errors import ConfigError
from .measures import MeasureSpec, spec_from_dict

SETTINGS = {
    "sigma": float, "n": int, "n_grid": list, "reps": int, "limit_draws": int, "draws": int,
    "grid": int, "eps": float, "seed": int, "t_grid": list, "limit_points": int, "jitter": float,
    "m": int, "radius": float, "beta": float, "eta": float, "workers": int,
}


def load_config(path) -> dict:
    """Read and validate a config file; returns the settings with ``spec`` built."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(doc, str(path))


def parse_config(doc, source: str = "<config>") -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    if "variant" in doc:
        doc = {"measure": doc}
    if "measure" not in doc:
        raise ConfigError(f"{source}: missing 'measure' entry")
    out = {"spec": spec_from_dict(doc["measure"])}
    for key, value in doc.items():
        if key == "measure":
            continue
        kind = SETTINGS.get(key)
        if kind is None:
            raise ConfigError(f"{source}: unknown setting {key!r}")
        try:
            out[key] = [float(v) for v in value] if kind is list else kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{source}: setting {key!r} has invalid value {value!r}") from None
    return out


def dump_spec(spec: MeasureSpec) -> str:
    return yaml.safe_dump({"measure": spec.to_dict()}, sort_keys=True)
