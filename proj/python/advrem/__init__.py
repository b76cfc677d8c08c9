"""Python access to the adversarial-removal pipeline."""

import json
from pathlib import Path

from . import _advrem
from ._advrem import __version__, binomial_upper_tail, encode, tokenize

__all__ = [
    "__version__", "tokenize", "derive", "generate", "split", "read_corpus", "write_corpus",
    "training_config", "train", "audit", "encode", "attacker_accuracy", "fairness",
    "mann_whitney_u", "binomial_upper_tail", "render_report", "run_experiment",
]


def derive(text, task="sentiment", lexicon=None, default_z=None):
    """Returns (rows, counts); rows are (tokens, y, z) triples."""
    rows, counts = _advrem.derive(text, task, lexicon or "", default_z)
    return rows, json.loads(counts)


def generate(seed=1, **spec):
    return _advrem.generate(json.dumps(spec), seed)


def split(pool, train, dev, unbalanced_q=None, seed=1):
    return _advrem.split(pool, train, dev, unbalanced_q, seed)


def read_corpus(path):
    return _advrem.read_corpus(Path(path))


def write_corpus(path, rows):
    _advrem.write_corpus(Path(path), rows)


def _strings(config):
    return {k: str(v).lower() if isinstance(v, bool) else str(v) for k, v in (config or {}).items()}


def training_config(**overrides):
    return json.loads(_advrem.training_config(_strings(overrides)))


def train(train_path, dev_path, run_dir, **config):
    return json.loads(_advrem.train(Path(train_path), Path(dev_path), _strings(config), Path(run_dir)))


def audit(run_dir, train_path, dev_path, **attacker):
    return json.loads(_advrem.audit(Path(run_dir), Path(train_path), Path(dev_path), json.dumps(attacker)))


def attacker_accuracy(train_vectors, train_z, dev_vectors, dev_z, **attacker):
    """Best dev accuracy of an MLP attacker on fixed vectors: (accuracy, epoch, predictions)."""
    return _advrem.attacker_accuracy(train_vectors, list(train_z), dev_vectors, list(dev_z), json.dumps(attacker))


def fairness(y, z, y_hat):
    return json.loads(_advrem.fairness(list(y), list(z), list(y_hat)))


def mann_whitney_u(a, b, alternative="less"):
    return json.loads(_advrem.mann_whitney_u(list(a), list(b), alternative))


def render_report(dirs):
    return _advrem.render_report([Path(d) for d in dirs])


def run_experiment(spec_path):
    return Path(_advrem.run_experiment(Path(spec_path)))
