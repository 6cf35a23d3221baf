"""Teammate-type classifiers.

The two language-model classifiers build a prompt from the rubric, the
probe description and (for the retrieval variant) labeled exemplars, then
parse a strict JSON reply. Anything that goes wrong on that path falls back
to the nearest-prototype rule, and the result says so.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .env import Action
from .fingerprint import N_ABSTRACT, Dataset, Fingerprint, ProbeHistory, probe_trace
from .llm_client import LlmClient, LlmError
from .policies import M, TYPES, TeammateType
from .retrieval import TrajectoryDB, TrajectoryRecord, embed
from .rubric import Rubric, describe, fmt, rubric_to_text

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3
PLASTIC_EPS = 1e-3
PROMPT_VERSION = "classify-prompt/1"


@dataclass(frozen=True)
class ClassificationResult:
    predicted: TeammateType
    confidence: float
    rationale: str
    source: str
    fallback_used: bool = False
    prompt_hash: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "predicted", TeammateType(self.predicted))

    def to_dict(self) -> dict:
        return {
            "predicted": self.predicted.key,
            "confidence": self.confidence,
            "rationale": self.rationale,
            "source": self.source,
            "fallback_used": self.fallback_used,
            "prompt_hash": self.prompt_hash,
        }


# -- nearest prototype ------------------------------------------------------


def prototype_distances(fp: Fingerprint, rubric: Rubric) -> np.ndarray:
    """Mean absolute z-distance of ``fp`` to each type's prototype."""
    x = fp.vector(rubric.selected)
    out = np.empty(M)
    for t in TYPES:
        sigma = np.maximum(rubric.stds(t), SIGMA_FLOOR)
        out[int(t)] = np.mean(np.abs(x - rubric.means(t)) / sigma)
    return out


def softmin(d: np.ndarray) -> np.ndarray:
    w = np.exp(-(d - d.min()))
    return w / w.sum()


def classify_prototype(fp: Fingerprint, rubric: Rubric) -> ClassificationResult:
    d = prototype_distances(fp, rubric)
    best = int(np.argmin(d))  # first index wins ties
    conf = float(softmin(d)[best])
    t = TeammateType(best)
    why = f"closest prototype is {t.key} (mean z-distance {d[best]:.3f})"
    return ClassificationResult(t, conf, why, "prototype")


# -- prompts ----------------------------------------------------------------

SYSTEM_INSTRUCTIONS = """\
You observe a teammate in a two-agent cooking game for a short probe window and must decide which behavior type it has.
Each type below lists the mean (μ) and standard deviation (σ) of behavior statistics measured over probe windows of the same length.
"""

OUTPUT_INSTRUCTIONS = """\
Answer with a single JSON object and nothing else, of the form
{"type": <one of "default", "pot_focused", "plate_focused", "serve_focused", "mixed">, "confidence": <number between 0 and 1>, "rationale": <one short sentence>}
"""


def collab_prompt(fp: Fingerprint, rubric: Rubric) -> str:
    return (
        SYSTEM_INSTRUCTIONS
        + "\n## Behavior types\n\n"
        + rubric_to_text(rubric)
        + "\n## Observed teammate\n\n"
        + describe(fp, rubric.selected)
        + "\n"
        + OUTPUT_INSTRUCTIONS
    )


def exemplar_block(i: int, rec: TrajectoryRecord, score: float) -> str:
    return f"### Example {i}: type {rec.true_type.key}, similarity {fmt(score)}\n{rec.description}"


def recollab_prompt(fp: Fingerprint, rubric: Rubric, hits: Sequence[tuple[TrajectoryRecord, float]]) -> str:
    examples = "\n".join(exemplar_block(i + 1, rec, s) for i, (rec, s) in enumerate(hits))
    return (
        SYSTEM_INSTRUCTIONS
        + "\n## Behavior types\n\n"
        + rubric_to_text(rubric)
        + "\n## Labeled examples most similar to the observed teammate\n\n"
        + examples
        + "\n## Observed teammate\n\n"
        + describe(fp, rubric.selected)
        + "\n"
        + OUTPUT_INSTRUCTIONS
    )


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ParseError(ValueError):
    pass


def parse_reply(text: str) -> tuple[TeammateType, float, str]:
    """Strict parse of the JSON reply; any deviation raises ParseError."""
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, TypeError) as e:
        raise ParseError(f"reply is not JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ParseError("reply is not a JSON object")
    keys = {t.key: t for t in TYPES}
    label = obj.get("type")
    if label not in keys:
        raise ParseError(f"unknown type {label!r}")
    conf = obj.get("confidence")
    if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0 <= conf <= 1 or math.isnan(conf):
        raise ParseError(f"bad confidence {conf!r}")
    why = obj.get("rationale", "")
    if not isinstance(why, str):
        raise ParseError("rationale must be a string")
    return keys[label], float(conf), why


# -- deterministic responders for mock mode ---------------------------------


def vote(hits: Sequence[tuple[TeammateType, float]], fp: Fingerprint, rubric: Rubric) -> tuple[TeammateType, float]:
    """Similarity-weighted majority over retrieved labels.

    Each neighbour votes with weight (1 + cosine) / 2, which keeps weights
    nonnegative. Tied totals go to the type whose prototype is closest.
    """
    totals = np.zeros(M)
    for label, score in hits:
        totals[int(label)] += (1.0 + score) / 2.0
    top = totals.max()
    tied = [int(i) for i in np.flatnonzero(np.isclose(totals, top, rtol=0, atol=1e-12))]
    if len(tied) > 1:
        d = prototype_distances(fp, rubric)
        best = min(tied, key=lambda i: (d[i], i))
    else:
        best = tied[0]
    conf = top / totals.sum() if totals.sum() > 0 else 1.0 / M
    return TeammateType(best), float(conf)


def mock_responder(prompt: str, context: Mapping[str, Any]) -> str:
    """Answer like a well-behaved model, from the structured inputs behind the prompt."""
    fp, rubric = context["fingerprint"], context["rubric"]
    hits = context.get("hits")
    if hits:
        t, conf = vote([(rec.true_type, s) for rec, s in hits], fp, rubric)
        why = f"{len(hits)} similar labeled examples mostly show {t.key}"
    else:
        r = classify_prototype(fp, rubric)
        t, conf, why = r.predicted, r.confidence, r.rationale
    return json.dumps({"type": t.key, "confidence": round(conf, 6), "rationale": why})


def mock_client() -> LlmClient:
    return LlmClient(responder=mock_responder)


# -- language-model classifiers ---------------------------------------------


def _ask(prompt: str, context: dict, fp: Fingerprint, rubric: Rubric, llm: LlmClient, source: str) -> ClassificationResult:
    h = prompt_hash(prompt)
    try:
        reply = llm.chat(prompt, context)
        t, conf, why = parse_reply(reply)
    except (LlmError, ParseError) as e:
        log.warning("%s falling back to prototype rule: %s", source, e)
        r = classify_prototype(fp, rubric)
        return ClassificationResult(r.predicted, r.confidence, r.rationale, source, True, h)
    return ClassificationResult(t, conf, why, source, False, h)


def classify_collab(fp: Fingerprint, rubric: Rubric, llm: LlmClient) -> ClassificationResult:
    prompt = collab_prompt(fp, rubric)
    return _ask(prompt, {"fingerprint": fp, "rubric": rubric}, fp, rubric, llm, "collab")


def retrieve(fp: Fingerprint, db: TrajectoryDB, k: int, llm: LlmClient | None = None):
    text = describe(fp, db.rubric.selected)
    q = embed(text, fp, db.mode, db.zscore, llm)
    return db.topk(q, k)


def classify_recollab(
    fp: Fingerprint, rubric: Rubric, db: TrajectoryDB, k: int, llm: LlmClient
) -> ClassificationResult:
    hits = retrieve(fp, db, k, llm)
    prompt = recollab_prompt(fp, rubric, hits)
    return _ask(prompt, {"fingerprint": fp, "rubric": rubric, "hits": hits}, fp, rubric, llm, "recollab")


# -- logistic regression ----------------------------------------------------


class DegenerateData(ValueError):
    pass


@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray  # M x (n_features + 1), bias in the last column
    feature_order: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    dropped: tuple[str, ...] = ()
    losses: tuple[float, ...] = field(default=(), repr=False)

    def design(self, fps: Sequence[Fingerprint]) -> np.ndarray:
        X = np.array([fp.vector(self.feature_order) for fp in fps]).reshape(len(fps), -1)
        return _with_bias((X - self.mean) / self.std)


def _with_bias(Z: np.ndarray) -> np.ndarray:
    return np.hstack([Z, np.ones((len(Z), 1))])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(W: np.ndarray, X: np.ndarray, Y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus (l2/2)·‖W‖² over non-bias weights.

    ``X`` carries the bias column last, ``Y`` is one-hot.
    """
    n = len(X)
    logits = X @ W.T
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    Wr = W[:, :-1]
    loss = -np.sum(Y * logp) / n + 0.5 * l2 * np.sum(Wr * Wr)
    grad = (np.exp(logp) - Y).T @ X / n
    grad[:, :-1] += l2 * Wr
    return float(loss), grad


def fit_logreg(
    train: Dataset,
    features: Sequence[str],
    epochs: int = 500,
    lr: float = 0.1,
    l2: float = 1e-4,
) -> LogRegModel:
    """Full-batch gradient descent from zero weights on z-scored features."""
    present = {int(t) for _, t in train}
    missing = [t.key for t in TYPES if int(t) not in present]
    if missing:
        raise ValueError(f"no training samples for {missing}")
    X = np.array([fp.vector(features) for fp, _ in train], dtype=float).reshape(len(train), -1)
    mean, std = X.mean(axis=0), X.std(axis=0)
    keep = std > 0
    dropped = tuple(f for f, k in zip(features, keep) if not k)
    if not keep.any():
        raise DegenerateData("every feature is constant over the training data")
    order = tuple(f for f, k in zip(features, keep) if k)
    Xd = _with_bias((X[:, keep] - mean[keep]) / std[keep])
    Y = np.eye(M)[[int(t) for _, t in train]]
    W = np.zeros((M, Xd.shape[1]))
    losses = []
    for _ in range(epochs):
        loss, grad = loss_and_grad(W, Xd, Y, l2)
        losses.append(loss)
        W = W - lr * grad
    losses.append(loss_and_grad(W, Xd, Y, l2)[0])
    return LogRegModel(W, order, mean[keep], std[keep], dropped, tuple(losses))


def predict_proba(model: LogRegModel, fp: Fingerprint) -> np.ndarray:
    return softmax(model.design([fp]) @ model.weights.T)[0]


def predict_logreg(model: LogRegModel, fp: Fingerprint) -> ClassificationResult:
    p = predict_proba(model, fp)
    best = int(np.argmax(p))
    t = TeammateType(best)
    return ClassificationResult(t, float(min(p[best], 1.0)), f"softmax probability {p[best]:.3f}", "logreg")


# -- Bayesian belief over types ---------------------------------------------


class InvalidBelief(ValueError):
    pass


@dataclass(frozen=True)
class Belief:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (M,) or not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise InvalidBelief(f"not a distribution over {M} types: {p}")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls) -> "Belief":
        return cls(np.full(M, 1.0 / M))


N_ACTIONS = len(Action)


def fit_likelihoods(records: Sequence[TrajectoryRecord]) -> np.ndarray:
    """Per-type action frequencies per abstract state; unseen states are uniform.

    Shape (M, abstract states, actions).
    """
    counts = np.zeros((M, N_ABSTRACT, N_ACTIONS))
    for rec in records:
        for s, a in rec.trace:
            counts[int(rec.true_type), s, a] += 1
    totals = counts.sum(axis=2, keepdims=True)
    return np.divide(counts, totals, out=np.full_like(counts, 1.0 / N_ACTIONS), where=totals > 0)


def plastic_update(belief: Belief, state: int, action: int, likelihoods: np.ndarray, eps: float = PLASTIC_EPS) -> Belief:
    post = belief.probs * (likelihoods[:, state, int(action)] + eps)
    total = post.sum()
    if not np.isfinite(total) or total <= 0:
        raise InvalidBelief("belief collapsed")
    return Belief(post / total)


def classify_plastic(history: ProbeHistory, likelihoods: np.ndarray, prior: Belief | None = None) -> ClassificationResult:
    b = prior or Belief.uniform()
    for s, a in probe_trace(history):
        b = plastic_update(b, s, a, likelihoods)
    best = int(np.argmax(b.probs))
    return ClassificationResult(
        TeammateType(best), float(min(b.probs[best], 1.0)), f"posterior {b.probs[best]:.3f} after {len(history)} actions", "plastic"
    )


# -- trivial baselines ------------------------------------------------------


def classify_random(rng: np.random.Generator) -> ClassificationResult:
    t = TeammateType(int(rng.integers(M)))
    return ClassificationResult(t, 1.0 / M, "uniform random choice", "random")


def classify_oracle(true_type: TeammateType) -> ClassificationResult:
    return ClassificationResult(TeammateType(true_type), 1.0, "ground-truth type", "oracle")
