"""Product embedding recommenders: synthetic data, training, clustering and evaluation."""

import json

from ._prodrec import Corpus, Error, Model
from ._prodrec import cluster
from ._prodrec import default_config as _default_config
from ._prodrec import evaluate as _evaluate
from ._prodrec import generate as _generate
from ._prodrec import validate_config as _validate_config

__all__ = ["Corpus", "Error", "Model", "cluster", "config", "evaluate", "generate", "train"]


def _dump(overrides):
    return json.dumps(overrides or {})


def config(overrides=None):
    """Effective configuration as a dict: defaults overlaid with `overrides`."""
    if overrides is None:
        return json.loads(_default_config())
    return json.loads(_validate_config(_dump(overrides)))


def generate(overrides=None):
    """Generated corpus for the `gen` section of `overrides`."""
    receipts, cohorts = _generate(_dump(overrides))
    return Corpus(receipts, cohorts)


def train(corpus, method="bagged-prod2vec", overrides=None):
    return Model.train(corpus, method, _dump(overrides))


def evaluate(corpus, split_date, method, model=None, overrides=None):
    """Per-day and per-horizon accuracy report as a dict."""
    return json.loads(_evaluate(corpus, split_date, method, model, _dump(overrides)))
