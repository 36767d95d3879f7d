"""Discrete-event simulator of a tree-based DHT under peer fluctuation.

Thin wrappers around the C++ core. The heavy lifting (overlay protocol,
event queue, metrics) happens in `_fluctsim`; this module just decodes the
JSON payloads.
"""

import json as _json

try:
    from ._fluctsim import *  # noqa: F401,F403  (installed package layout)
    from . import _fluctsim as _core
except ImportError:  # in-tree builds put the extension directly on sys.path
    from _fluctsim import *  # noqa: F401,F403
    import _fluctsim as _core


def run(scenario_text="", seed=None, trace="", check_invariants=False, include_trace=False):
    """Run one scenario; returns the report as a dict."""
    return _json.loads(
        _core.run_json(scenario_text, seed, trace, check_invariants, include_trace)
    )


def sweep(scenario_text="", rates=(), seeds_per_rate=3, floor=0.9, jobs=0, seed=None):
    """Sweep fluctuation rates; returns points, knee, and per-run reports."""
    return _json.loads(
        _core.sweep_json(scenario_text, list(rates), seeds_per_rate, floor, jobs, seed)
    )
