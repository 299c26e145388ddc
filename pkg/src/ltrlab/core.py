"""Shared domain types and bit-exact readers/writers for ranking data.

Covers the 6-column TREC run format, the 4-column qrels format, and the
line-delimited distillation dataset format used by the rest of the toolkit.
All types are immutable values after construction and safe to share between
workers.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

QueryId = str
DocId = str


class ParseError(ValueError):
    """Malformed ranking-data input. Carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateEntryError(ParseError):
    """A (query, doc) pair appeared more than once in a run."""


def validate_id(value: str, kind: str = "identifier") -> str:
    """Check that an id is a non-empty string without whitespace.

    Whitespace is the field separator in the TREC text formats, so it can
    never appear inside an identifier.
    """
    if not isinstance(value, str) or not value:
        raise ValueError(f"{kind} must be a non-empty string, got {value!r}")
    if any(ch.isspace() for ch in value):
        raise ValueError(f"{kind} {value!r} contains whitespace")
    return value


def canonical_order(
    entries: Iterable[tuple[DocId, float]],
) -> tuple[tuple[DocId, float], ...]:
    """Sort (doc, score) pairs by descending score, ties by ascending doc id."""
    return tuple(sorted(entries, key=lambda e: (-e[1], e[0])))


@dataclass(frozen=True)
class ScoredList:
    """A query's candidate documents with relevance scores.

    The entry order is the ranking: producers (`parse_run`, re-ranking) emit
    entries sorted by descending score with ties broken by ascending doc id.
    """

    query: QueryId
    entries: tuple[tuple[DocId, float], ...]

    def __post_init__(self):
        validate_id(self.query, "query id")
        object.__setattr__(self, "entries", tuple(tuple(e) for e in self.entries))
        seen: set[str] = set()
        for doc, score in self.entries:
            validate_id(doc, "doc id")
            if doc in seen:
                raise ValueError(f"duplicate doc id {doc!r} in list for query {self.query!r}")
            seen.add(doc)
            if not np.isfinite(score):
                raise ValueError(f"non-finite score for doc {doc!r} in query {self.query!r}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def docs(self) -> tuple[DocId, ...]:
        return tuple(doc for doc, _ in self.entries)

    @property
    def scores(self) -> tuple[float, ...]:
        return tuple(score for _, score in self.entries)

    def truncate(self, depth: int) -> "ScoredList":
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        return ScoredList(self.query, self.entries[:depth])


@dataclass(frozen=True)
class TrainingGroup:
    """One relevant document plus a sample of hard negatives for a query."""

    query: QueryId
    positive: DocId
    negatives: tuple[DocId, ...]

    def __post_init__(self):
        validate_id(self.query, "query id")
        validate_id(self.positive, "doc id")
        object.__setattr__(self, "negatives", tuple(self.negatives))
        for doc in self.negatives:
            validate_id(doc, "doc id")
        if len(set(self.negatives)) != len(self.negatives):
            raise ValueError(f"negatives for query {self.query!r} are not pairwise distinct")
        if self.positive in self.negatives:
            raise ValueError(
                f"positive doc {self.positive!r} also appears among negatives for query {self.query!r}"
            )

    @property
    def members(self) -> tuple[DocId, ...]:
        """All group members, positive first."""
        return (self.positive,) + self.negatives


@dataclass(frozen=True)
class TeacherRanking:
    """A teacher's total order over candidate documents, best first.

    Positions are 1-based: the document at index 0 has rank 1, so the
    standard log2(rank + 1) discount equals 1 at the top.
    """

    query: QueryId
    docs: tuple[DocId, ...]
    source_depth: int

    def __post_init__(self):
        validate_id(self.query, "query id")
        object.__setattr__(self, "docs", tuple(self.docs))
        if not self.docs:
            raise ValueError(f"teacher ranking for query {self.query!r} is empty")
        for doc in self.docs:
            validate_id(doc, "doc id")
        if len(set(self.docs)) != len(self.docs):
            raise ValueError(f"teacher ranking for query {self.query!r} has duplicate docs")
        if self.source_depth < len(self.docs):
            raise ValueError(
                f"source_depth {self.source_depth} smaller than ranking length {len(self.docs)}"
            )

    def __len__(self) -> int:
        return len(self.docs)

    def rank_of(self, doc: DocId) -> int:
        """1-based rank of a document."""
        return self.docs.index(doc) + 1


class Qrels:
    """Relevance judgments: (query, doc) -> integer grade >= 0.

    Absent pairs are grade 0. Treat instances as immutable.
    """

    __slots__ = ("_grades",)

    def __init__(self, grades: Mapping[QueryId, Mapping[DocId, int]] | None = None):
        data: dict[str, dict[str, int]] = {}
        for qid, docs in (grades or {}).items():
            validate_id(qid, "query id")
            per_q: dict[str, int] = {}
            for doc, grade in docs.items():
                validate_id(doc, "doc id")
                if not isinstance(grade, (int, np.integer)) or isinstance(grade, bool):
                    raise ValueError(f"grade for ({qid!r}, {doc!r}) must be an integer")
                if grade < 0:
                    raise ValueError(f"negative grade {grade} for ({qid!r}, {doc!r})")
                per_q[doc] = int(grade)
            data[qid] = per_q
        self._grades = data

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[QueryId, DocId, int]]) -> "Qrels":
        grades: dict[str, dict[str, int]] = {}
        for qid, doc, grade in pairs:
            grades.setdefault(qid, {})[doc] = grade
        return cls(grades)

    def grade(self, query: QueryId, doc: DocId) -> int:
        return self._grades.get(query, {}).get(doc, 0)

    def judged(self, query: QueryId) -> dict[DocId, int]:
        """All judged docs for a query with their grades (copy)."""
        return dict(self._grades.get(query, {}))

    def positives(self, query: QueryId) -> tuple[DocId, ...]:
        """Docs with grade > 0, sorted by descending grade then ascending id."""
        judged = self._grades.get(query, {})
        pos = [(doc, g) for doc, g in judged.items() if g > 0]
        pos.sort(key=lambda e: (-e[1], e[0]))
        return tuple(doc for doc, _ in pos)

    def query_ids(self) -> tuple[QueryId, ...]:
        return tuple(sorted(self._grades))

    def items(self) -> Iterator[tuple[QueryId, DocId, int]]:
        for qid in sorted(self._grades):
            for doc in sorted(self._grades[qid]):
                yield qid, doc, self._grades[qid][doc]

    def restrict(self, queries: Iterable[QueryId]) -> "Qrels":
        keep = set(queries)
        return Qrels({q: docs for q, docs in self._grades.items() if q in keep})

    def __len__(self) -> int:
        return sum(len(docs) for docs in self._grades.values())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Qrels) and self._grades == other._grades

    def __repr__(self) -> str:
        return f"Qrels({len(self._grades)} queries, {len(self)} judgments)"


# ---------------------------------------------------------------------------
# TREC run format: "qid Q0 docid rank score tag", whitespace separated
# ---------------------------------------------------------------------------


def _numbered_lines(source: str | IO[str]) -> Iterator[tuple[int, str]]:
    lines = source.splitlines() if isinstance(source, str) else source
    for lineno, line in enumerate(lines, start=1):
        yield lineno, line.rstrip("\n")


def parse_run(source: str | IO[str]) -> dict[QueryId, ScoredList]:
    """Parse a TREC run into per-query scored lists.

    Ranks in the file are ignored and recomputed: entries come out sorted by
    descending score with ties broken by ascending doc id. Blank lines are
    skipped; anything else malformed raises ParseError with its line number.
    """
    per_query: dict[str, list[tuple[str, float]]] = {}
    seen: set[tuple[str, str]] = set()
    for lineno, line in _numbered_lines(source):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 6:
            raise ParseError(f"expected 6 fields, got {len(fields)}", lineno)
        qid, literal, doc, rank, score_text, _tag = fields
        if literal != "Q0":
            raise ParseError(f"second field must be 'Q0', got {literal!r}", lineno)
        try:
            int(rank)
        except ValueError:
            raise ParseError(f"rank field {rank!r} is not an integer", lineno) from None
        try:
            score = float(score_text)
        except ValueError:
            raise ParseError(f"score field {score_text!r} is not a number", lineno) from None
        if not np.isfinite(score):
            raise ParseError(f"non-finite score {score_text!r}", lineno)
        if (qid, doc) in seen:
            raise DuplicateEntryError(f"duplicate entry for query {qid!r} doc {doc!r}", lineno)
        seen.add((qid, doc))
        per_query.setdefault(qid, []).append((doc, score))
    return {qid: ScoredList(qid, canonical_order(entries)) for qid, entries in per_query.items()}


def write_run(rankings: Mapping[QueryId, ScoredList], tag: str) -> str:
    """Serialize rankings as TREC run text.

    Queries are emitted in sorted order, entries in canonical order, scores
    with exactly 6 decimal places. parse_run(write_run(x)) reproduces the
    ordering and the scores to 6 decimals.
    """
    validate_id(tag, "run tag")
    out: list[str] = []
    for qid in sorted(rankings):
        ranking = rankings[qid]
        if ranking.query != qid:
            raise ValueError(f"run maps key {qid!r} to a list for query {ranking.query!r}")
        for rank, (doc, score) in enumerate(canonical_order(ranking.entries), start=1):
            out.append(f"{qid} Q0 {doc} {rank} {score:.6f} {tag}")
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# Qrels format: "qid 0 docid grade"
# ---------------------------------------------------------------------------


def parse_qrels(source: str | IO[str]) -> Qrels:
    """Parse TREC-style qrels. Later duplicate lines override earlier ones."""
    grades: dict[str, dict[str, int]] = {}
    for lineno, line in _numbered_lines(source):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, got {len(fields)}", lineno)
        qid, literal, doc, grade_text = fields
        if literal != "0":
            raise ParseError(f"second field must be '0', got {literal!r}", lineno)
        try:
            grade = int(grade_text)
        except ValueError:
            raise ParseError(f"grade field {grade_text!r} is not an integer", lineno) from None
        if grade < 0:
            raise ParseError(f"negative grade {grade}", lineno)
        if doc in grades.get(qid, {}):
            logger.warning(
                "qrels line %d overrides earlier judgment for query %r doc %r", lineno, qid, doc
            )
        grades.setdefault(qid, {})[doc] = grade
    return Qrels(grades)


def write_qrels(qrels: Qrels) -> str:
    """Serialize qrels; write_qrels then parse_qrels is the identity."""
    out = [f"{qid} 0 {doc} {grade}" for qid, doc, grade in qrels.items()]
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# Distillation dataset: one JSON record per line
# ---------------------------------------------------------------------------
#
# Record schema (key order fixed):
#   {"query_id": ..., "source_depth": ...,
#    "passages": [{"doc_id": ..., "features": [...],
#                  "first_stage_rank": ..., "teacher_rank": ...}, ...]}
# Passages appear in teacher order, so teacher_rank is always 1..n in order.
# Floats are serialized at full precision (shortest round-trip repr).


@dataclass(frozen=True)
class DistillRecord:
    """One query's teacher-ranked candidates with features and first-stage ranks.

    `docs` is the teacher order, best first; row i of `features` and entry i
    of `first_stage_ranks` belong to docs[i].
    """

    query: QueryId
    docs: tuple[DocId, ...]
    features: np.ndarray
    first_stage_ranks: tuple[int, ...]
    source_depth: int

    def __post_init__(self):
        validate_id(self.query, "query id")
        object.__setattr__(self, "docs", tuple(self.docs))
        object.__setattr__(self, "first_stage_ranks", tuple(int(r) for r in self.first_stage_ranks))
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError(f"features must be a 2-d array, got shape {feats.shape}")
        object.__setattr__(self, "features", feats)
        n = len(self.docs)
        if n == 0:
            raise ValueError(f"record for query {self.query!r} has no docs")
        if len(set(self.docs)) != n:
            raise ValueError(f"record for query {self.query!r} has duplicate docs")
        if feats.shape[0] != n or len(self.first_stage_ranks) != n:
            raise ValueError(
                f"record for query {self.query!r}: docs/features/ranks lengths disagree"
            )
        if not np.isfinite(feats).all():
            raise ValueError(f"record for query {self.query!r} has non-finite features")
        for rank in self.first_stage_ranks:
            if rank < 1 or rank > self.source_depth:
                raise ValueError(
                    f"first-stage rank {rank} outside 1..{self.source_depth} "
                    f"for query {self.query!r}"
                )
        if len(set(self.first_stage_ranks)) != n:
            raise ValueError(f"record for query {self.query!r} has duplicate first-stage ranks")

    def __len__(self) -> int:
        return len(self.docs)

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def ranking(self) -> TeacherRanking:
        return TeacherRanking(self.query, self.docs, self.source_depth)


def write_distill_dataset(records: Sequence[DistillRecord]) -> str:
    """Serialize distillation records as JSON lines, one query per line."""
    out: list[str] = []
    for rec in records:
        passages = [
            {
                "doc_id": doc,
                "features": [float(x) for x in rec.features[i]],
                "first_stage_rank": rec.first_stage_ranks[i],
                "teacher_rank": i + 1,
            }
            for i, doc in enumerate(rec.docs)
        ]
        obj = {"query_id": rec.query, "source_depth": rec.source_depth, "passages": passages}
        out.append(json.dumps(obj, separators=(",", ":")))
    return "\n".join(out) + ("\n" if out else "")


def parse_distill_dataset(source: str | IO[str]) -> list[DistillRecord]:
    """Parse JSON-lines distillation records, validating shape and order."""
    records: list[DistillRecord] = []
    for lineno, line in _numbered_lines(source):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
        try:
            query = obj["query_id"]
            source_depth = int(obj["source_depth"])
            passages = obj["passages"]
            docs = tuple(p["doc_id"] for p in passages)
            features = np.array([p["features"] for p in passages], dtype=np.float64)
            fs_ranks = tuple(int(p["first_stage_rank"]) for p in passages)
            teacher_ranks = [int(p["teacher_rank"]) for p in passages]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad record structure: {exc}", lineno) from None
        if teacher_ranks != list(range(1, len(passages) + 1)):
            raise ParseError("passages are not in teacher order (teacher_rank must be 1..n)", lineno)
        try:
            records.append(DistillRecord(query, docs, features, fs_ranks, source_depth))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return records
