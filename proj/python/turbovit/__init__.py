"""turbovit: hierarchical vision transformer kernels, analytical complexity
accounting, constrained architecture search and inference benchmarking.

Specs are plain dicts mirroring the JSON schema (see docs/file-formats.md);
the heavy lifting lives in the compiled extension module.
"""

import json
from pathlib import Path

from turbovit._core import (  # noqa: F401
    ConfigError,
    Model,
    ShapeError,
    __version__,
    analyze_spec,
    indicator,
    matmul,
    num_threads,
    run_bench,
    sanity_fit,
    search,
    set_num_threads,
    softmax_lastdim,
    spec_hash,
    validate_spec,
)


def load_spec(path):
    """Read an architecture spec file into a dict."""
    return json.loads(Path(path).read_text())


def dump_spec(spec):
    """Serialize a spec dict to the canonical JSON text."""
    return json.dumps(spec, indent=2, sort_keys=True) + "\n"


def analyze(spec, resolution=0, flops_per_mac=1, include_norm_act=False):
    """Parameter/FLOP totals and per-layer rows for a spec dict."""
    return analyze_spec(json.dumps(spec), resolution, flops_per_mac, include_norm_act)


def validate(spec):
    """Feasibility report and structural facts for a spec dict."""
    return validate_spec(json.dumps(spec))


def build(spec, seed=0):
    """Bind a spec dict to parameters; returns a Model."""
    return Model(json.dumps(spec), seed)


def run_search(config):
    """Run the constrained search from a config dict."""
    return search(json.dumps(config))
