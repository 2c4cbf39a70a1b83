"""Structured-text I/O used across the toolkit.

All documents (scenarios, plan files, summaries) are YAML.  Floats are
written with 17 significant digits so every file round-trips bit-faithfully;
loading rejects duplicate keys so configuration typos cannot silently win.
"""

from __future__ import annotations

import hashlib

import numpy as np
import yaml


class StrictLoader(yaml.SafeLoader):
    """SafeLoader that refuses duplicate mapping keys."""


def _construct_mapping(loader, node, deep=False):
    mapping = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in mapping:
            raise yaml.constructor.ConstructorError(
                None, None, f"duplicate key {key!r}", key_node.start_mark)
        mapping[key] = loader.construct_object(value_node, deep=deep)
    return mapping


StrictLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


class _Dumper(yaml.SafeDumper):
    pass


def _float_representer(dumper, value):
    if value != value:  # NaN
        text = ".nan"
    elif value == float("inf"):
        text = ".inf"
    elif value == float("-inf"):
        text = "-.inf"
    else:
        text = format(value, ".17g")
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


_Dumper.add_representer(float, _float_representer)
_Dumper.add_representer(np.float64, _float_representer)
_Dumper.add_representer(
    np.ndarray, lambda d, arr: d.represent_list([float(v) for v in np.ravel(arr)]))
for _t in (np.int32, np.int64, np.intp):
    _Dumper.add_representer(_t, lambda d, v: d.represent_int(int(v)))


def dump_yaml(obj, path=None) -> str:
    """Serialize ``obj`` deterministically; write to ``path`` when given."""
    text = yaml.dump(obj, Dumper=_Dumper, default_flow_style=False,
                     sort_keys=False, width=120)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_yaml(path) -> object:
    """Strict-parse a YAML document from ``path`` (duplicate keys rejected)."""
    with open(path) as fh:
        return yaml.load(fh, Loader=StrictLoader)


def load_yaml_str(text: str) -> object:
    return yaml.load(text, Loader=StrictLoader)


def physics_hash(params) -> str:
    """Stable fingerprint of a parameter set, for plan/scenario pairing."""
    fields = (params.m, params.I, params.g, params.h_body, params.r_h_offset,
              params.e, params.mu, params.ground_z)
    blob = ",".join(format(float(v), ".17g") for v in fields)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
