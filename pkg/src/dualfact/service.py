"""HTTP annotation service for collecting human fact judgments.

Serves fact-judgment tasks built deterministically from a dataset, stores
judgments (Correct | Hallucination | Saliency) per annotator and evidence
mode, and exports label distributions plus the pairwise agreement inputs.

Endpoints (paths are part of the external contract):

* ``GET /api/tasks/next?annotator=...`` -- the lowest-index task the
  annotator has not judged yet, or ``{"task": null}`` when done;
* ``POST /api/judgments`` -- body ``{task_id, annotator, label}``; atomic
  and durable (write-ahead journal, fsync before acknowledging); Saliency
  on a caption task is a 422;
* ``GET /api/progress`` -- per-annotator completion;
* ``GET /api/export`` -- distribution rows and Cohen's kappa per annotator
  pair;
* ``GET /frames/{frame_id}`` -- pre-extracted frame images, served
  statically; the service never decodes video.

Persistence is an append-only JSONL journal: every submission is kept as
history and the latest one per (task, annotator) is effective. Tasks are not
persisted; they are rebuilt bit-identically from (dataset, sampling spec,
seed) on restart. Annotator identity is an opaque token supplied by the
client on first use; there is no authentication beyond it.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

from pydantic import BaseModel

from .dataset import Dataset
from .facts import ConceptualFact, Fact, FactLayer, canonical_key
from .stats import LabelPairs, UndefinedCoefficientError, cohen_kappa


class JudgmentIn(BaseModel):
    """POST /api/judgments request body."""

    task_id: str
    annotator: str
    label: str

LABELS = ("Correct", "Hallucination", "Saliency")
TASK_MODES = ("caption", "video")
DEFAULT_FRAME_COUNT = 8


class ServiceError(Exception):
    """Base class for annotation-service errors."""


class TaskBuildError(ServiceError):
    """The sampling spec asks for more tasks than the dataset can provide."""

    def __init__(self, message: str, achievable: int):
        super().__init__(message)
        self.achievable = achievable


class IllegalLabelError(ServiceError):
    """Label not legal for the task's evidence mode (HTTP 422)."""


@dataclass(frozen=True)
class JudgmentTask:
    """One fact to judge under one evidence mode."""

    task_id: str
    index: int
    clause_id: str
    layer: str
    mode: str  # "caption" | "video"
    fact_text: str
    fact: Mapping[str, str]
    caption: Optional[str] = None
    frames: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in TASK_MODES:
            raise ServiceError(f"unknown task mode {self.mode!r}")
        if self.mode == "video" and not self.frames:
            raise ServiceError("video-mode tasks require at least one frame")
        if self.mode == "caption" and not (self.caption and self.caption.strip()):
            raise ServiceError("caption-mode tasks require the caption text")

    def legal_labels(self) -> tuple[str, ...]:
        return LABELS if self.mode == "video" else LABELS[:2]

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "index": self.index,
            "clause_id": self.clause_id,
            "layer": self.layer,
            "mode": self.mode,
            "fact_text": self.fact_text,
            "fact": dict(self.fact),
            "caption": self.caption,
            "frames": list(self.frames),
            "legal_labels": list(self.legal_labels()),
        }


@dataclass(frozen=True)
class Judgment:
    task_id: str
    annotator_id: str
    label: str
    timestamp: float
    seq: int = 0

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ServiceError(f"unknown label {self.label!r}")


@dataclass(frozen=True)
class Stratum:
    mode: str
    layer: str
    count: int


@dataclass(frozen=True)
class SamplingSpec:
    strata: tuple[Stratum, ...]
    frame_count: int = DEFAULT_FRAME_COUNT

    @classmethod
    def balanced(cls, per_stratum: int, frame_count: int = DEFAULT_FRAME_COUNT) -> "SamplingSpec":
        """One stratum per (mode, layer) combination, same size each."""
        strata = tuple(
            Stratum(mode=mode, layer=layer.value, count=per_stratum)
            for mode in TASK_MODES
            for layer in FactLayer
        )
        return cls(strata=strata, frame_count=frame_count)


def default_frame_refs(clause_id: str, count: int) -> tuple[str, ...]:
    """Frame-image references for a clause: pre-extracted files by convention."""
    return tuple(f"{clause_id}_f{i}.jpg" for i in range(count))


def _fact_json(fact: Fact) -> dict:
    if isinstance(fact, ConceptualFact):
        return {"kind": "conceptual", "role": fact.role.value, "value": fact.value}
    return {
        "kind": "contextual",
        "relation": fact.relation.value,
        "predicate": fact.predicate,
        "argument": fact.argument,
    }


def build_tasks(
    dataset: Dataset,
    spec: SamplingSpec,
    seed: int,
    frame_refs: Callable[[str, int], tuple[str, ...]] = default_frame_refs,
) -> tuple[JudgmentTask, ...]:
    """Deterministically sample judgment tasks per stratum.

    Candidates are the predicted facts of the dataset's clauses, in file
    order. Raises ``TaskBuildError`` with the achievable count when a
    stratum asks for more facts than exist.
    """
    import random

    rng = random.Random(seed)
    tasks: list[JudgmentTask] = []
    for stratum in spec.strata:
        layer = FactLayer(stratum.layer)
        candidates: list[tuple[str, Fact, str]] = []
        for record in dataset:
            bundle = record.bundle(layer)
            if bundle is None or bundle.predicted is None:
                continue
            for fact in bundle.predicted:
                candidates.append((record.clause_id, fact, record.caption))
        if stratum.count > len(candidates):
            raise TaskBuildError(
                f"stratum (mode={stratum.mode}, layer={stratum.layer}) asks "
                f"for {stratum.count} tasks but only {len(candidates)} "
                f"predicted facts are available",
                achievable=len(candidates),
            )
        sampled = rng.sample(candidates, stratum.count)
        for clause_id, fact, caption in sampled:
            index = len(tasks)
            tasks.append(
                JudgmentTask(
                    task_id=f"task-{index:04d}",
                    index=index,
                    clause_id=clause_id,
                    layer=stratum.layer,
                    mode=stratum.mode,
                    fact_text=canonical_key(fact),
                    fact=_fact_json(fact),
                    caption=caption if stratum.mode == "caption" else None,
                    frames=(
                        frame_refs(clause_id, spec.frame_count)
                        if stratum.mode == "video"
                        else ()
                    ),
                )
            )
    return tuple(tasks)


class JudgmentStore:
    """Append-only journal of judgments with latest-wins effective view.

    Every submission is appended, flushed, and fsynced before it is
    acknowledged, so a crash between submissions loses nothing. Replaying
    the journal rebuilds the same effective state.
    """

    def __init__(self, journal_path: Union[str, Path], clock: Callable[[], float] = time.time):
        self._path = Path(journal_path)
        self._clock = clock
        self._lock = threading.Lock()
        self._history: list[Judgment] = []
        self._effective: dict[tuple[str, str], Judgment] = {}
        self._seq = 0
        if self._path.exists():
            self._replay()

    def _replay(self) -> None:
        with self._path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                judgment = Judgment(
                    task_id=obj["task_id"],
                    annotator_id=obj["annotator_id"],
                    label=obj["label"],
                    timestamp=obj["timestamp"],
                    seq=obj["seq"],
                )
                self._apply(judgment)
                self._seq = max(self._seq, judgment.seq)

    def _apply(self, judgment: Judgment) -> None:
        self._history.append(judgment)
        self._effective[(judgment.task_id, judgment.annotator_id)] = judgment

    def submit(self, task_id: str, annotator_id: str, label: str) -> Judgment:
        with self._lock:
            self._seq += 1
            judgment = Judgment(
                task_id=task_id,
                annotator_id=annotator_id,
                label=label,
                timestamp=self._clock(),
                seq=self._seq,
            )
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {
                            "task_id": judgment.task_id,
                            "annotator_id": judgment.annotator_id,
                            "label": judgment.label,
                            "timestamp": judgment.timestamp,
                            "seq": judgment.seq,
                        }
                    )
                )
                fh.write("\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._apply(judgment)
            return judgment

    def effective(self) -> dict[tuple[str, str], Judgment]:
        with self._lock:
            return dict(self._effective)

    def history(self) -> tuple[Judgment, ...]:
        with self._lock:
            return tuple(self._history)

    def annotators(self) -> tuple[str, ...]:
        with self._lock:
            return tuple(sorted({a for (_, a) in self._effective}))

    def compact(self) -> None:
        """Rewrite the journal with only the effective judgments."""
        with self._lock:
            tmp = self._path.with_suffix(".compact")
            with tmp.open("w", encoding="utf-8") as fh:
                for judgment in sorted(self._effective.values(), key=lambda j: j.seq):
                    fh.write(
                        json.dumps(
                            {
                                "task_id": judgment.task_id,
                                "annotator_id": judgment.annotator_id,
                                "label": judgment.label,
                                "timestamp": judgment.timestamp,
                                "seq": judgment.seq,
                            }
                        )
                    )
                    fh.write("\n")
                fh.flush()
                os.fsync(fh.fileno())
            tmp.replace(self._path)
            self._history = sorted(self._effective.values(), key=lambda j: j.seq)


class AnnotationSession:
    """Task queue plus judgment store: the service's application core.

    Usable directly in tests; the FastAPI app is a thin HTTP adapter.
    """

    def __init__(self, tasks: Sequence[JudgmentTask], store: JudgmentStore):
        self.tasks = tuple(sorted(tasks, key=lambda t: t.index))
        self.store = store
        self._by_id = {t.task_id: t for t in self.tasks}

    def next_task(self, annotator_id: str) -> Optional[JudgmentTask]:
        if not annotator_id:
            raise ServiceError("annotator token required")
        effective = self.store.effective()
        for task in self.tasks:
            if (task.task_id, annotator_id) not in effective:
                return task
        return None

    def submit(self, task_id: str, annotator_id: str, label: str) -> Judgment:
        task = self._by_id.get(task_id)
        if task is None:
            raise KeyError(task_id)
        if not annotator_id:
            raise ServiceError("annotator token required")
        if label not in LABELS:
            raise IllegalLabelError(f"unknown label {label!r}")
        if label not in task.legal_labels():
            raise IllegalLabelError(
                f"label {label!r} is not legal for {task.mode}-mode tasks"
            )
        return self.store.submit(task_id, annotator_id, label)

    def progress(self) -> dict:
        effective = self.store.effective()
        per_annotator: dict[str, int] = {}
        for (_, annotator_id) in effective:
            per_annotator[annotator_id] = per_annotator.get(annotator_id, 0) + 1
        return {
            "total_tasks": len(self.tasks),
            "judgments": len(self.store.history()),
            "annotators": {
                a: {"completed": n, "total": len(self.tasks)}
                for a, n in sorted(per_annotator.items())
            },
        }

    def export_results(self) -> dict:
        return export_results(self.tasks, self.store)


def export_results(tasks: Sequence[JudgmentTask], store: JudgmentStore) -> dict:
    """Distribution rows per (mode, layer) plus pairwise agreement.

    Percentages are exact rationals over effective judgments, rendered to
    two decimals; each row's rendered percentages sum to 100 within 0.02.
    """
    from .scoring import render_percent

    by_id = {t.task_id: t for t in tasks}
    effective = store.effective()
    rows: dict[tuple[str, str], dict[str, int]] = {}
    for (task_id, _), judgment in effective.items():
        task = by_id.get(task_id)
        if task is None:
            continue
        cell = rows.setdefault(
            (task.mode, task.layer), {label: 0 for label in LABELS}
        )
        cell[judgment.label] += 1

    distribution = []
    for (mode, layer), counts in sorted(rows.items()):
        total = sum(counts.values())
        entry: dict = {"mode": mode, "layer": layer, "total": total, "counts": counts}
        for label in LABELS:
            ratio = Fraction(counts[label], total) if total else None
            show = ratio
            if label == "Saliency" and mode == "caption":
                show = None
            entry[f"pct_{label.lower()}"] = (
                None if show is None else render_percent(show)
            )
        distribution.append(entry)

    annotators = store.annotators()
    agreement = []
    for i in range(len(annotators)):
        for j in range(i + 1, len(annotators)):
            a, b = annotators[i], annotators[j]
            shared = [
                task.task_id
                for task in tasks
                if (task.task_id, a) in effective and (task.task_id, b) in effective
            ]
            if not shared:
                continue
            pairs = LabelPairs(
                a=tuple(effective[(t, a)].label for t in shared),
                b=tuple(effective[(t, b)].label for t in shared),
                alphabet=LABELS,
            )
            try:
                kappa: Optional[float] = cohen_kappa(pairs)
            except UndefinedCoefficientError:
                kappa = None
            agreement.append(
                {
                    "annotator_a": a,
                    "annotator_b": b,
                    "items": len(shared),
                    "labels_a": list(pairs.a),
                    "labels_b": list(pairs.b),
                    "kappa": kappa,
                }
            )
    return {"distribution": distribution, "agreement": agreement}


def create_app(
    session: AnnotationSession,
    frames_dir: Optional[Union[str, Path]] = None,
    static_dir: Optional[Union[str, Path]] = None,
):
    """Build the FastAPI app over an annotation session."""
    from fastapi import FastAPI, HTTPException, Query
    from fastapi.responses import FileResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="dualfact annotation service")

    @app.get("/api/tasks/next")
    def api_next_task(annotator: str = Query(...)):
        if not annotator.strip():
            raise HTTPException(status_code=422, detail="annotator token required")
        task = session.next_task(annotator)
        completed = sum(
            1 for (t, a) in session.store.effective() if a == annotator
        )
        return {
            "task": None if task is None else task.to_json(),
            "completed": completed,
            "total": len(session.tasks),
        }

    @app.post("/api/judgments")
    def api_submit(body: JudgmentIn):
        try:
            judgment = session.submit(body.task_id, body.annotator, body.label)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown task {body.task_id}")
        except IllegalLabelError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except ServiceError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "ok": True,
            "task_id": judgment.task_id,
            "annotator": judgment.annotator_id,
            "label": judgment.label,
            "seq": judgment.seq,
        }

    @app.get("/api/progress")
    def api_progress():
        return session.progress()

    @app.get("/api/export")
    def api_export():
        return session.export_results()

    if frames_dir is not None:
        frames_path = Path(frames_dir)

        @app.get("/frames/{frame_id}")
        def api_frame(frame_id: str):
            target = (frames_path / frame_id).resolve()
            if not str(target).startswith(str(frames_path.resolve())) or not target.is_file():
                raise HTTPException(status_code=404, detail=f"no frame {frame_id}")
            return FileResponse(target)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
