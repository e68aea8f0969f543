"""Intent-aware routing between understanding and visual-generation modes.

The gate score is s = sigmoid(G([e_sem, v_syn])): a semantic embedding from
the embedder client concatenated with a four-component syntactic vector
(visual-imperative flag, cognitive-verb flag, causal-query flag, physical
entity density), pushed through a one-hidden-layer tanh network G.  Inputs
route to visual generation iff s >= tau; the boundary goes to generation.

Training minimizes binary cross-entropy by full-batch gradient descent.  A
step that would increase the loss is retried at half the step size (bounded),
so the per-epoch loss sequence is non-increasing by construction.  Hard
negatives — generation-lexicon words in requests that need a textual answer —
ship in the bundled corpus.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ForgeError
from .physdb import normalize_label

GATE_PARAMS_VERSION = "1"
SYNTACTIC_DIM = 4
DEFAULT_TAU = 0.5
DEFAULT_HIDDEN_DIM = 32

MODE_UNDERSTANDING = "understanding"
MODE_VISUAL_GENERATION = "visual_generation"


class RouterError(ForgeError):
    pass


# ---------------------------------------------------------------------------
# syntactic features


@dataclass(frozen=True)
class Lexicons:
    visual_imperatives: frozenset[str]
    cognitive_verbs: frozenset[str]
    causal_markers: frozenset[str]
    physics_terms: frozenset[str]


def _read_terms(path: Path) -> frozenset[str]:
    terms = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        term = normalize_label(line)
        if term and not line.lstrip().startswith("#"):
            terms.add(term)
    return frozenset(terms)


def lexicon_dir() -> Path:
    return Path(__file__).parent / "data" / "lexicons"


def load_lexicons(directory: Optional[Path] = None) -> Lexicons:
    """Load the four term lists (one term or phrase per line)."""
    directory = Path(directory) if directory else lexicon_dir()
    return Lexicons(
        visual_imperatives=_read_terms(directory / "visual_imperatives.txt"),
        cognitive_verbs=_read_terms(directory / "cognitive_verbs.txt"),
        causal_markers=_read_terms(directory / "causal_markers.txt"),
        physics_terms=_read_terms(directory / "physics_terms.txt"),
    )


@dataclass(frozen=True)
class SyntacticVector:
    """The four hand-crafted routing indicators, v_syn in R^4."""

    visual_imperative: float
    cognitive_verb: float
    causal_query: float
    physical_entity_density: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.visual_imperative,
                self.cognitive_verb,
                self.causal_query,
                self.physical_entity_density,
            ],
            dtype=np.float64,
        )


def _phrase_present(phrase: str, padded_text: str, tokens: set[str]) -> bool:
    if " " in phrase:
        return f" {phrase} " in padded_text
    return phrase in tokens


def extract_syntactic(text: str, lexicons: Lexicons) -> SyntacticVector:
    """Case-insensitive whole-word feature extraction over normalized text.

    Empty input yields the all-zero vector (the density denominator is
    guarded).  Density = physics-lexicon token hits / token count, clamped to
    [0, 1].
    """
    normalized = normalize_label(text)
    tokens = normalized.split()
    if not tokens:
        return SyntacticVector(0.0, 0.0, 0.0, 0.0)
    token_set = set(tokens)
    padded = f" {normalized} "
    visual = any(_phrase_present(p, padded, token_set) for p in lexicons.visual_imperatives)
    cognitive = any(_phrase_present(p, padded, token_set) for p in lexicons.cognitive_verbs)
    causal = any(_phrase_present(p, padded, token_set) for p in lexicons.causal_markers)
    hits = sum(1 for tok in tokens if tok in lexicons.physics_terms)
    density = min(1.0, hits / len(tokens))
    return SyntacticVector(float(visual), float(cognitive), float(causal), density)


# ---------------------------------------------------------------------------
# gate network


@dataclass
class GateParams:
    """Weights of the gate network G over [e_sem, v_syn].

    One hidden tanh layer of width ``hidden_dim``, scalar output into the
    logistic.  Input dimension is embed_dim + 4.
    """

    w1: np.ndarray  # [hidden, input]
    b1: np.ndarray  # [hidden]
    w2: np.ndarray  # [hidden]
    b2: float
    embed_dim: int

    def __post_init__(self) -> None:
        expected = self.embed_dim + SYNTACTIC_DIM
        if self.w1.shape[1] != expected:
            raise RouterError(
                f"gate input dim {self.w1.shape[1]} != embed_dim + 4 = {expected}"
            )
        for arr in (self.w1, self.b1, self.w2):
            if not np.isfinite(arr).all():
                raise RouterError("gate parameters must be finite")
        if not math.isfinite(self.b2):
            raise RouterError("gate parameters must be finite")

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "GateParams":
        return GateParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2, self.embed_dim)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def with_flat(self, flat: np.ndarray) -> "GateParams":
        h, d = self.w1.shape
        w1 = flat[: h * d].reshape(h, d)
        b1 = flat[h * d : h * d + h]
        w2 = flat[h * d + h : h * d + 2 * h]
        b2 = float(flat[-1])
        return GateParams(w1.copy(), b1.copy(), w2.copy(), b2, self.embed_dim)

    def save(self, path: Path | str) -> None:
        payload = {
            "version": GATE_PARAMS_VERSION,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "GateParams":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise RouterError(f"cannot load gate params from {path}: {exc}") from exc
        if payload.get("version") != GATE_PARAMS_VERSION:
            raise RouterError(f"unsupported gate params version {payload.get('version')!r}")
        return cls(
            w1=np.asarray(payload["w1"], dtype=np.float64),
            b1=np.asarray(payload["b1"], dtype=np.float64),
            w2=np.asarray(payload["w2"], dtype=np.float64),
            b2=float(payload["b2"]),
            embed_dim=int(payload["embed_dim"]),
        )

    @classmethod
    def zeros(cls, embed_dim: int, hidden_dim: int = DEFAULT_HIDDEN_DIM) -> "GateParams":
        d = embed_dim + SYNTACTIC_DIM
        return cls(np.zeros((hidden_dim, d)), np.zeros(hidden_dim), np.zeros(hidden_dim), 0.0, embed_dim)

    @classmethod
    def init(cls, embed_dim: int, hidden_dim: int = DEFAULT_HIDDEN_DIM, seed: int = 0) -> "GateParams":
        rng = np.random.default_rng(seed)
        d = embed_dim + SYNTACTIC_DIM
        scale = 1.0 / math.sqrt(d)
        return cls(
            w1=rng.normal(0.0, scale, size=(hidden_dim, d)),
            b1=np.zeros(hidden_dim),
            w2=rng.normal(0.0, 1.0 / math.sqrt(hidden_dim), size=hidden_dim),
            b2=0.0,
            embed_dim=embed_dim,
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logits(params: GateParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.tanh(x @ params.w1.T + params.b1)
    return hidden @ params.w2 + params.b2, hidden


def gate_score(e_sem: np.ndarray, v_syn: SyntacticVector, params: GateParams) -> float:
    """s = sigmoid(G([e_sem, v_syn])), strictly inside (0, 1)."""
    e_sem = np.asarray(e_sem, dtype=np.float64)
    if e_sem.shape != (params.embed_dim,):
        raise RouterError(
            f"embedding dim {e_sem.shape} does not match gate embed_dim {params.embed_dim}"
        )
    x = np.concatenate([e_sem, v_syn.as_array()])[None, :]
    z, _ = _logits(params, x)
    return float(_sigmoid(z)[0])


@dataclass(frozen=True)
class RouteDecision:
    score: float
    mode: str
    threshold: float

    def to_json(self) -> dict:
        return {"score": self.score, "mode": self.mode, "threshold": self.threshold}


def route(s: float, tau: float = DEFAULT_TAU) -> RouteDecision:
    """Understanding iff s < tau; the boundary s == tau goes to generation."""
    if not 0.0 < tau < 1.0:
        raise RouterError(f"tau must be in (0, 1), got {tau}")
    mode = MODE_VISUAL_GENERATION if s >= tau else MODE_UNDERSTANDING
    return RouteDecision(score=s, mode=mode, threshold=tau)


class ActivationSink:
    """No-op stand-in for the generation backend: records which decisions
    would have activated it instead of doing any work."""

    def __init__(self) -> None:
        self.activations: list[RouteDecision] = []
        self.suppressed: int = 0

    def accept(self, decision: RouteDecision) -> None:
        if decision.mode == MODE_VISUAL_GENERATION:
            self.activations.append(decision)
        else:
            self.suppressed += 1


class Router:
    """Convenience bundle: lexicons + embedder + params -> decisions."""

    def __init__(self, params: GateParams, embedder, lexicons: Optional[Lexicons] = None, tau: float = DEFAULT_TAU):
        self.params = params
        self.embedder = embedder
        self.lexicons = lexicons or load_lexicons()
        self.tau = tau

    def decide(self, text: str, sink: Optional[ActivationSink] = None) -> RouteDecision:
        v_syn = extract_syntactic(text, self.lexicons)
        e_sem = self.embedder.embed(text)
        decision = route(gate_score(e_sem, v_syn, self.params), self.tau)
        if sink is not None:
            sink.accept(decision)
        return decision


# ---------------------------------------------------------------------------
# training


def _bce_loss_and_grad(
    params: GateParams, x: np.ndarray, y: np.ndarray
) -> tuple[float, GateParams]:
    """Full-batch binary cross-entropy and its exact gradient.

    Stable form: loss_i = softplus(z_i) - y_i * z_i.  An empty batch has zero
    loss and zero gradient."""
    n = x.shape[0]
    if n == 0:
        return 0.0, GateParams(
            np.zeros_like(params.w1), np.zeros_like(params.b1), np.zeros_like(params.w2), 0.0, params.embed_dim
        )
    z, hidden = _logits(params, x)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    dz = (_sigmoid(z) - y) / n  # [n]
    gw2 = hidden.T @ dz
    gb2 = float(dz.sum())
    dhidden = np.outer(dz, params.w2) * (1.0 - hidden**2)  # [n, h]
    gw1 = dhidden.T @ x
    gb1 = dhidden.sum(axis=0)
    return loss, GateParams(gw1, gb1, gw2, gb2, params.embed_dim)


@dataclass
class TrainHyper:
    lr: float = 0.5
    epochs: int = 400
    seed: int = 0
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    holdout_frac: float = 0.2


@dataclass
class TrainReport:
    n_train: int
    n_holdout: int
    final_loss: float
    loss_curve: list[float]
    holdout_accuracy: float
    confusion: dict[str, int]  # tp / fp / fn / tn over the holdout split

    def to_json(self) -> dict:
        return {
            "n_train": self.n_train,
            "n_holdout": self.n_holdout,
            "final_loss": self.final_loss,
            "holdout_accuracy": self.holdout_accuracy,
            "confusion": dict(self.confusion),
        }


def build_features(
    texts: Sequence[str], embedder, lexicons: Lexicons
) -> np.ndarray:
    rows = []
    for text in texts:
        e_sem = np.asarray(embedder.embed(text), dtype=np.float64)
        rows.append(np.concatenate([e_sem, extract_syntactic(text, lexicons).as_array()]))
    return np.stack(rows)


def train_gate(
    dataset: Sequence[tuple[str, str]],
    embedder,
    lexicons: Optional[Lexicons] = None,
    hyper: TrainHyper = TrainHyper(),
) -> tuple[GateParams, TrainReport]:
    """Fit the gate on labeled (text, mode) records.

    Deterministic under ``hyper.seed``.  Each epoch takes one full-batch
    gradient step; if the step would raise the loss, the step size is halved
    (at most 30 times) before accepting, so the recorded loss curve is
    non-increasing.  Aborts on non-finite loss with diagnostics.
    """
    lexicons = lexicons or load_lexicons()
    labels = {MODE_UNDERSTANDING: 0.0, MODE_VISUAL_GENERATION: 1.0}
    try:
        y_all = np.array([labels[mode] for _, mode in dataset], dtype=np.float64)
    except KeyError as exc:
        raise RouterError(f"unknown mode label {exc.args[0]!r} in training data") from exc
    if len(set(y_all.tolist())) < 2:
        raise RouterError("training data must contain both classes")

    x_all = build_features([text for text, _ in dataset], embedder, lexicons)
    embed_dim = x_all.shape[1] - SYNTACTIC_DIM

    rng = np.random.default_rng(hyper.seed)
    order = rng.permutation(len(dataset))
    n_holdout = max(1, int(round(len(dataset) * hyper.holdout_frac)))
    holdout_idx, train_idx = order[:n_holdout], order[n_holdout:]
    if len({*y_all[train_idx].tolist()}) < 2:
        raise RouterError("training split lost a class; lower holdout_frac")
    x_train, y_train = x_all[train_idx], y_all[train_idx]

    params = GateParams.init(embed_dim, hyper.hidden_dim, seed=hyper.seed)
    loss, grad = _bce_loss_and_grad(params, x_train, y_train)
    curve = [loss]
    for epoch in range(hyper.epochs):
        step = hyper.lr
        for _ in range(30):
            candidate = params.with_flat(params.flatten() - step * grad.flatten())
            new_loss, new_grad = _bce_loss_and_grad(candidate, x_train, y_train)
            if math.isnan(new_loss) or math.isinf(new_loss):
                raise RouterError(
                    f"non-finite loss at epoch {epoch} (step {step:g}); aborting"
                )
            if new_loss <= loss:
                params, loss, grad = candidate, new_loss, new_grad
                break
            step *= 0.5
        curve.append(loss)

    x_hold, y_hold = x_all[holdout_idx], y_all[holdout_idx]
    z, _ = _logits(params, x_hold)
    predicted = (_sigmoid(z) >= DEFAULT_TAU).astype(np.float64)
    confusion = {
        "tp": int(((predicted == 1) & (y_hold == 1)).sum()),
        "fp": int(((predicted == 1) & (y_hold == 0)).sum()),
        "fn": int(((predicted == 0) & (y_hold == 1)).sum()),
        "tn": int(((predicted == 0) & (y_hold == 0)).sum()),
    }
    accuracy = float((predicted == y_hold).mean())
    report = TrainReport(
        n_train=len(train_idx),
        n_holdout=len(holdout_idx),
        final_loss=loss,
        loss_curve=curve,
        holdout_accuracy=accuracy,
        confusion=confusion,
    )
    return params, report


def analytic_gradient_check(
    params: GateParams, x: np.ndarray, y: np.ndarray, eps: float = 1e-5
) -> float:
    """Max relative error between backprop and central-difference gradients.

    Error is ||g_bp - g_fd||_inf normalized by the larger gradient's infinity
    norm (floored at 1e-12 so an all-zero degenerate batch compares exactly).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise RouterError(f"eps must be in [1e-7, 1e-3], got {eps}")
    _, grad = _bce_loss_and_grad(params, x, y)
    analytic = grad.flatten()
    flat0 = params.flatten()
    numeric = np.zeros_like(flat0)
    for i in range(flat0.size):
        bumped = flat0.copy()
        bumped[i] += eps
        loss_plus, _ = _bce_loss_and_grad(params.with_flat(bumped), x, y)
        bumped[i] -= 2 * eps
        loss_minus, _ = _bce_loss_and_grad(params.with_flat(bumped), x, y)
        numeric[i] = (loss_plus - loss_minus) / (2 * eps)
    diff = float(np.abs(analytic - numeric).max())
    scale = max(float(np.abs(analytic).max()), float(np.abs(numeric).max()), 1e-12)
    return diff / scale


def load_corpus(path: Path | str) -> list[tuple[str, str]]:
    """Read a training corpus JSONL (`text, label`)."""
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                records.append((str(raw["text"]), str(raw["label"])))
            except (json.JSONDecodeError, KeyError) as exc:
                raise RouterError(f"{path}:{lineno}: bad corpus record: {exc}") from exc
    return records


def bundled_corpus_path() -> Path:
    return Path(__file__).parent / "data" / "router_corpus.jsonl"


def bundled_params_path() -> Path:
    return Path(__file__).parent / "data" / "gate_params.json"
