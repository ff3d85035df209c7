"""Flat key=value configuration files and preset/override resolution.

The file format is one ``key = value`` pair per line with ``#`` comments.
Keys mirror the configuration dataclass fields: MashConfig fields directly
(``iters``, ``tau_low``, ...), NetConfig fields with a ``net.`` prefix
(``net.base_width``, ``net.reduced``), and the sweep-grid keys used by the
command line (``taus``, ``betas``, ``sigma``, ``k``, ``reps``, ``lps_flags``).
Command-line flags override file values, which override the preset.
"""

from dataclasses import fields

from mash.network import NetConfig
from mash.training import MashConfig

SWEEP_KEYS = {"taus", "betas", "sigma", "k", "reps", "lps_flags"}

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a string-to-string dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config_file(path) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read())


def _coerce(value: str, kind):
    if kind is bool or kind == "bool":
        low = str(value).strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    return kind(value)


_MASH_FIELD_TYPES = {f.name: f.type for f in fields(MashConfig) if f.name != "net"}
_NET_FIELD_TYPES = {f.name: f.type for f in fields(NetConfig)}
_TYPE_MAP = {"int": int, "float": float, "bool": bool, "str": str}


def build_config(preset: str = "desk", file_values: dict | None = None,
                 overrides: dict | None = None) -> MashConfig:
    """Resolve a MashConfig from preset, config-file values and CLI overrides."""
    cfg = MashConfig.preset(preset)
    mash_kwargs = {}
    net_kwargs = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key in SWEEP_KEYS or value is None:
                continue
            if key.startswith("net."):
                name = key[4:]
                if name not in _NET_FIELD_TYPES:
                    raise ValueError(f"unknown config key {key!r}")
                kind = _TYPE_MAP.get(str(_NET_FIELD_TYPES[name]), str)
                net_kwargs[name] = value if not isinstance(value, str) else _coerce(value, kind)
            else:
                if key not in _MASH_FIELD_TYPES:
                    raise ValueError(f"unknown config key {key!r}")
                kind = _TYPE_MAP.get(str(_MASH_FIELD_TYPES[key]), str)
                mash_kwargs[key] = value if not isinstance(value, str) else _coerce(value, kind)
    net_fields = {f.name: getattr(cfg.net, f.name) for f in fields(NetConfig)}
    net_fields.update(net_kwargs)
    if not net_fields.get("reduced"):
        net = NetConfig(**net_fields)
    else:
        # reduced overrides width/depth; pass the flag plus the rest
        net_fields.pop("base_width", None)
        net_fields.pop("depth", None)
        net = NetConfig(**net_fields)
    cfg_fields = {f.name: getattr(cfg, f.name) for f in fields(MashConfig) if f.name != "net"}
    cfg_fields.update(mash_kwargs)
    return MashConfig(net=net, **cfg_fields)


def parse_float_list(text: str):
    return [float(tok) for tok in str(text).split(",") if tok.strip() != ""]


def parse_bool_list(text: str):
    return [_coerce(tok, bool) for tok in str(text).split(",") if tok.strip() != ""]
