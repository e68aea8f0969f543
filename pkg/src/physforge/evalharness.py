"""Benchmark scoring: relative-accuracy for numeric prediction, exact-match
accuracy for multiple choice, six-dimension judge scores for open-ended
reasoning, and judge-expert agreement.

Task/question-type pairing is fixed: prediction items are numeric, reasoning
items open-ended, understanding items MCQ.  Runs journal per-item results to
an append-only JSONL so interrupted evaluations resume to the identical
report.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import ForgeError

# Relative-error thresholds: an item passes level theta when its relative
# error stays below 1 - theta; the score averages the indicator over all ten.
MRA_THRESHOLDS: tuple[float, ...] = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95)

ZERO_GOLD_EPS = 1e-12

JUDGE_DIMENSIONS: tuple[str, ...] = (
    "semantic_consistency",
    "parameter_precision",
    "causal_validity",
    "mechanism_identification",
    "chain_completeness",
    "quant_qual_alignment",
)

JUDGE_SCALE_MAX = 5.0
AGREEMENT_FLOOR = 0.9


class EvalError(ForgeError):
    pass


class Task(str, Enum):
    PREDICTION = "prediction"
    REASONING = "reasoning"
    UNDERSTANDING = "understanding"


class QuestionType(str, Enum):
    NUMERIC = "numeric"
    OPEN_ENDED = "open_ended"
    MCQ = "mcq"


TASK_QUESTION_TYPE = {
    Task.PREDICTION: QuestionType.NUMERIC,
    Task.REASONING: QuestionType.OPEN_ENDED,
    Task.UNDERSTANDING: QuestionType.MCQ,
}


@dataclass(frozen=True)
class EvalItem:
    item_id: str
    task: Task
    question_type: QuestionType
    difficulty: int
    payload: dict  # question text, image ref, options for MCQ
    gold: object  # number for prediction, option letter for MCQ, rubric ref for reasoning
    attribute: Optional[str] = None  # prediction only

    def __post_init__(self) -> None:
        if TASK_QUESTION_TYPE[self.task] is not self.question_type:
            raise EvalError(
                f"item {self.item_id}: task {self.task.value} pairs with "
                f"{TASK_QUESTION_TYPE[self.task].value}, not {self.question_type.value}"
            )
        if self.difficulty not in (1, 2, 3):
            raise EvalError(f"item {self.item_id}: difficulty must be 1, 2, or 3")

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "task": self.task.value,
            "question_type": self.question_type.value,
            "difficulty": self.difficulty,
            "payload": self.payload,
            "gold": self.gold,
            "attribute": self.attribute,
        }

    @classmethod
    def from_json(cls, raw: Mapping) -> "EvalItem":
        return cls(
            item_id=str(raw["item_id"]),
            task=Task(raw["task"]),
            question_type=QuestionType(raw["question_type"]),
            difficulty=int(raw["difficulty"]),
            payload=dict(raw["payload"]),
            gold=raw["gold"],
            attribute=raw.get("attribute"),
        )


def load_dataset(path: Path | str) -> list[EvalItem]:
    items = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                items.append(EvalItem.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError, EvalError) as exc:
                raise EvalError(f"{path}:{lineno}: bad eval item: {exc}") from exc
    if not items:
        raise EvalError(f"{path}: empty dataset")
    return items


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MraResult:
    score: float
    n_scored: int
    n_excluded: int  # items dropped for |gold| below the zero threshold


def mra(
    predictions: Sequence[float],
    golds: Sequence[float],
    thresholds: Sequence[float] = MRA_THRESHOLDS,
) -> MraResult:
    """Mean relative accuracy over the threshold set.

    Per item and threshold theta, score 1 when |pred - gold|/|gold| < 1 - theta.
    Near-zero golds (|gold| < 1e-12) are excluded and counted."""
    if len(predictions) != len(golds):
        raise EvalError(f"length mismatch: {len(predictions)} predictions vs {len(golds)} golds")
    if not thresholds:
        raise EvalError("empty threshold set")
    per_item = []
    excluded = 0
    for pred, gold in zip(predictions, golds):
        if abs(gold) < ZERO_GOLD_EPS:
            excluded += 1
            continue
        rel_err = abs(pred - gold) / abs(gold)
        hits = sum(1 for theta in thresholds if rel_err < 1.0 - theta)
        per_item.append(hits / len(thresholds))
    if not per_item:
        raise EvalError("no scoreable items (all golds below the zero threshold)")
    return MraResult(score=sum(per_item) / len(per_item), n_scored=len(per_item), n_excluded=excluded)


def mcq_accuracy(predictions: Sequence[str], golds: Sequence[str]) -> float:
    """Exact-match fraction after trimming and uppercasing both sides."""
    if len(predictions) != len(golds):
        raise EvalError(f"length mismatch: {len(predictions)} predictions vs {len(golds)} golds")
    if not predictions:
        raise EvalError("no MCQ items to score")
    hits = sum(
        1 for p, g in zip(predictions, golds) if p.strip().upper() == g.strip().upper()
    )
    return hits / len(predictions)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation; requires length >= 2 and nonzero variance."""
    if len(xs) != len(ys):
        raise EvalError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        raise EvalError(f"need at least 2 points, got {n}")
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    dx = [x - mean_x for x in xs]
    dy = [y - mean_y for y in ys]
    var_x = sum(d * d for d in dx)
    var_y = sum(d * d for d in dy)
    if var_x == 0.0 or var_y == 0.0:
        raise EvalError("zero variance in one of the arguments")
    return sum(a * b for a, b in zip(dx, dy)) / math.sqrt(var_x * var_y)


@dataclass(frozen=True)
class AgreementResult:
    per_expert: tuple[float, ...]
    passed: bool
    failing_experts: tuple[int, ...]


def agreement_check(
    judge_scores: Sequence[float], expert_score_sets: Sequence[Sequence[float]]
) -> AgreementResult:
    """Pearson r of the judge against each expert; passes iff all r > 0.9."""
    if not expert_score_sets:
        raise EvalError("need at least one expert score list")
    rs = tuple(pearson(judge_scores, expert) for expert in expert_score_sets)
    failing = tuple(i for i, r in enumerate(rs) if not r > AGREEMENT_FLOOR)
    return AgreementResult(per_expert=rs, passed=not failing, failing_experts=failing)


# ---------------------------------------------------------------------------
# judge protocol


@dataclass(frozen=True)
class JudgeScore:
    semantic_consistency: float
    parameter_precision: float
    causal_validity: float
    mechanism_identification: float
    chain_completeness: float
    quant_qual_alignment: float

    def __post_init__(self) -> None:
        for name in JUDGE_DIMENSIONS:
            value = getattr(self, name)
            if not 0.0 <= value <= JUDGE_SCALE_MAX:
                raise EvalError(f"judge dimension {name}={value} outside [0, {JUDGE_SCALE_MAX:g}]")

    @property
    def aggregate(self) -> float:
        return sum(getattr(self, name) for name in JUDGE_DIMENSIONS) / len(JUDGE_DIMENSIONS)

    def to_json(self) -> dict:
        payload = {name: getattr(self, name) for name in JUDGE_DIMENSIONS}
        payload["aggregate"] = self.aggregate
        return payload


def rubric_path() -> Path:
    return Path(__file__).parent / "data" / "judge_rubric.txt"


def load_rubric(path: Optional[Path] = None) -> tuple[str, str]:
    """Rubric text and its sha256 (recorded in every report)."""
    text = Path(path or rubric_path()).read_text(encoding="utf-8")
    return text, hashlib.sha256(text.encode("utf-8")).hexdigest()


def judge_open_ended(item: EvalItem, response: str, judge, rubric: Optional[str] = None) -> JudgeScore:
    """Score one reasoning answer on the six rubric dimensions (0-5 each)."""
    if item.task is not Task.REASONING:
        raise EvalError(f"item {item.item_id} is {item.task.value}, not reasoning")
    if rubric is None:
        rubric, _ = load_rubric()
    raw = judge.score(rubric, str(item.payload.get("question", "")), response)
    if len(raw) != len(JUDGE_DIMENSIONS):
        raise EvalError(
            f"judge returned {len(raw)} scores, expected {len(JUDGE_DIMENSIONS)}"
        )
    return JudgeScore(**dict(zip(JUDGE_DIMENSIONS, (float(v) for v in raw))))


# ---------------------------------------------------------------------------
# runner


_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def parse_numeric_answer(text: str) -> float:
    match = _NUMBER.search(text)
    if match is None:
        raise EvalError(f"no numeric value in answer {text!r}")
    return float(match.group(0))


def parse_mcq_answer(text: str) -> str:
    stripped = text.strip()
    if not stripped:
        raise EvalError("empty MCQ answer")
    return stripped[0].upper()


@dataclass
class EvalReport:
    scores: dict  # prediction MRA, reasoning judge aggregate, understanding accuracy
    counts: dict  # per-task item counts
    per_difficulty: dict  # task -> difficulty -> score
    failures: int
    excluded_zero_gold: int
    rubric_hash: str
    config_hash: str = ""

    def to_json(self) -> dict:
        return {
            "scores": self.scores,
            "counts": self.counts,
            "per_difficulty": self.per_difficulty,
            "failures": self.failures,
            "excluded_zero_gold": self.excluded_zero_gold,
            "rubric_hash": self.rubric_hash,
            "config_hash": self.config_hash,
        }

    def table(self) -> str:
        lines = [
            f"{'task':<15} {'n':>4} {'score':>8}",
            "-" * 29,
        ]
        for task in Task:
            score = self.scores.get(task.value)
            rendered = "n/a" if score is None else f"{score:.4f}"
            lines.append(f"{task.value:<15} {self.counts.get(task.value, 0):>4} {rendered:>8}")
        lines.append("-" * 29)
        lines.append(f"failures: {self.failures}   zero-gold excluded: {self.excluded_zero_gold}")
        return "\n".join(lines)


def _journal_read(path: Path) -> dict[str, dict]:
    done: dict[str, dict] = {}
    if not path.exists():
        return done
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            continue  # torn tail from an interrupted run; the item reruns
        done[record["item_id"]] = record
    return done


def run_eval(
    items: Sequence[EvalItem],
    model,
    judge,
    journal_path: Optional[Path] = None,
    rubric: Optional[str] = None,
    config_hash: str = "",
    workers: int = 1,
) -> EvalReport:
    """Route every item to its metric and fold the journal into a report.

    Client failures mark the item failed (recorded, not raised).  With a
    journal path, already-journaled items are not re-run, and the final
    report is identical to an uninterrupted run.  Items score on up to
    ``workers`` threads; the journal stays single-writer and the report is a
    deterministic fold ordered by item_id, so the result is identical at any
    worker count.
    """
    if not items:
        raise EvalError("empty dataset")
    if rubric is None:
        rubric, rubric_hash = load_rubric()
    else:
        rubric_hash = hashlib.sha256(rubric.encode("utf-8")).hexdigest()

    def score_item(item: EvalItem) -> dict:
        record: dict = {"item_id": item.item_id, "task": item.task.value, "difficulty": item.difficulty}
        try:
            answer = model.answer(
                {
                    "item_id": item.item_id,
                    "question": item.payload.get("question", ""),
                    "image_ref": item.payload.get("image_ref"),
                    "options": item.payload.get("options"),
                }
            )
            if item.task is Task.PREDICTION:
                record["value"] = parse_numeric_answer(answer)
                record["gold"] = float(item.gold)
            elif item.task is Task.UNDERSTANDING:
                record["value"] = parse_mcq_answer(answer)
                record["gold"] = str(item.gold)
            else:
                score = judge_open_ended(item, answer, judge, rubric=rubric)
                record["value"] = score.aggregate
            record["ok"] = True
        except ForgeError as exc:
            record["ok"] = False
            record["error"] = str(exc)
        return record

    done = _journal_read(journal_path) if journal_path else {}
    pending = [item for item in items if item.item_id not in done]
    journal_handle = journal_path.open("a", encoding="utf-8") if journal_path else None

    def consume(results) -> None:
        for record in results:
            done[record["item_id"]] = record
            if journal_handle:
                journal_handle.write(json.dumps(record, sort_keys=True) + "\n")
                journal_handle.flush()

    try:
        if workers <= 1:
            consume(map(score_item, pending))
        else:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as pool:
                consume(pool.map(score_item, pending))
    finally:
        if journal_handle:
            journal_handle.close()

    # deterministic fold, ordered by item_id
    ordered = [done[item.item_id] for item in sorted(items, key=lambda i: i.item_id)]
    by_task: dict[str, list[dict]] = {task.value: [] for task in Task}
    failures = 0
    for record in ordered:
        if record.get("ok"):
            by_task[record["task"]].append(record)
        else:
            failures += 1

    scores: dict[str, Optional[float]] = {}
    excluded = 0

    def section_scores(records: list[dict], task: Task, count_exclusions: bool = False) -> Optional[float]:
        nonlocal excluded
        if not records:
            return None
        if task is Task.PREDICTION:
            try:
                result = mra([r["value"] for r in records], [r["gold"] for r in records])
            except EvalError:
                return None  # every gold in this slice was ~0
            if count_exclusions:
                excluded += result.n_excluded
            return result.score
        if task is Task.UNDERSTANDING:
            return mcq_accuracy([r["value"] for r in records], [r["gold"] for r in records])
        return sum(r["value"] for r in records) / len(records)

    per_difficulty: dict[str, dict[str, float]] = {}
    for task in Task:
        records = by_task[task.value]
        scores[task.value] = section_scores(records, task, count_exclusions=True)
        per_difficulty[task.value] = {}
        for level in (1, 2, 3):
            subset = [r for r in records if r["difficulty"] == level]
            if subset:
                value = section_scores(subset, task)
                if value is not None:
                    per_difficulty[task.value][str(level)] = value

    counts = {task.value: sum(1 for i in items if i.task is task) for task in Task}
    return EvalReport(
        scores=scores,
        counts=counts,
        per_difficulty=per_difficulty,
        failures=failures,
        excluded_zero_gold=excluded,
        rubric_hash=rubric_hash,
        config_hash=config_hash,
    )


def fixture_path() -> Path:
    return Path(__file__).parent / "data" / "eval_fixture.jsonl"
