"""Python front end of the PLIP lab C++ core."""

import json

from ._core import (
    ConfigError,
    DataError,
    NumericError,
    PlipModel,
    cmpm_loss,
    cosine_similarity,
    lr_at_epoch,
    mean_ap,
    rank_at_k,
    render_synthetic,
    sic_loss,
    tokenize,
    vap_loss,
)
from . import _core


def _parse(jsonl):
    return [json.loads(line) for line in jsonl.splitlines() if line.strip()]


def synth_manifest(n_identities, imgs_per_id, seed=0):
    """Procedural records as manifest dicts."""
    return _parse(_core.synth_manifest_jsonl(n_identities, imgs_per_id, seed))


def few_shot_split(records, percent, seed=0):
    text = "".join(json.dumps(r) + "\n" for r in records)
    return _parse(_core.few_shot_split_jsonl(text, percent, seed))


def run_cli(*args):
    """Runs one CLI command in-process; returns (exit code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])


__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "PlipModel",
    "cmpm_loss",
    "cosine_similarity",
    "few_shot_split",
    "lr_at_epoch",
    "mean_ap",
    "rank_at_k",
    "render_synthetic",
    "run_cli",
    "sic_loss",
    "synth_manifest",
    "tokenize",
    "vap_loss",
]
