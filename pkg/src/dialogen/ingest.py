"""Comment-dump parsing and per-post reply forest assembly.

Input is UTF-8 JSONL, one comment per line. Records are validated, deleted or
empty bodies/authors are skipped, and surviving records are grouped by post
into reply forests whose child lists are ordered by (created_utc, id) so the
result never depends on arrival order.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional

DELETED_MARKERS = {"[deleted]", "[removed]"}

_REQUIRED_FIELDS = {
    "id": str,
    "link_id": str,
    "author": str,
    "body": str,
    "score": int,
    "subreddit": str,
    "over_18": bool,
    "created_utc": int,
}


class ParseError(ValueError):
    """A line that is not one well-formed JSON object."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    """A well-formed line missing or mistyping a required field."""


class ForestError(ValueError):
    """Duplicate ids or a parent cycle inside one post's records."""


@dataclass(frozen=True)
class CommentRecord:
    id: str
    parent_id: Optional[str]
    link_id: str
    author: str
    body: str
    score: int
    subreddit: str
    over_18: bool
    created_utc: int


@dataclass(frozen=True)
class SkippedLine:
    """Signal that a structurally valid record was rejected, with the reason."""

    reason: str


@dataclass
class IngestStats:
    records_read: int = 0
    records_skipped: int = 0
    forests_built: int = 0
    orphans_promoted: int = 0
    skip_reasons: dict[str, int] = field(default_factory=dict)

    def note_skip(self, reason: str) -> None:
        self.records_read += 1
        self.records_skipped += 1
        self.skip_reasons[reason] = self.skip_reasons.get(reason, 0) + 1

    def merge(self, other: "IngestStats") -> "IngestStats":
        merged = IngestStats(
            records_read=self.records_read + other.records_read,
            records_skipped=self.records_skipped + other.records_skipped,
            forests_built=self.forests_built + other.forests_built,
            orphans_promoted=self.orphans_promoted + other.orphans_promoted,
            skip_reasons=dict(self.skip_reasons),
        )
        for reason, count in other.skip_reasons.items():
            merged.skip_reasons[reason] = merged.skip_reasons.get(reason, 0) + count
        return merged


@dataclass
class CommentForest:
    post_id: str
    nodes: dict[str, tuple[CommentRecord, list[str]]]
    roots: list[str]

    def record(self, comment_id: str) -> CommentRecord:
        return self.nodes[comment_id][0]

    def children(self, comment_id: str) -> list[str]:
        return self.nodes[comment_id][1]


def _strip_prefix(value: str) -> str:
    # Raw dumps prefix comment ids with t1_ and post ids with t3_.
    if value.startswith("t1_") or value.startswith("t3_"):
        return value[3:]
    return value


def parse_comment_line(line: str, line_no: Optional[int] = None) -> CommentRecord | SkippedLine:
    """Parse one JSONL record into a CommentRecord or a SkippedLine.

    Deleted/removed/empty bodies and authors are skip-signals rather than
    errors; such turns can never pass the word-count rule or serve as
    reference material. Malformed JSON and schema violations raise.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line_no) from exc
    if not isinstance(obj, dict):
        raise ParseError("record is not a JSON object", line_no)

    for name, typ in _REQUIRED_FIELDS.items():
        if name not in obj:
            raise SchemaError(f"missing required field {name!r}", line_no)
        value = obj[name]
        if typ is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaError(f"field {name!r} must be an integer", line_no)
        elif not isinstance(value, typ):
            raise SchemaError(f"field {name!r} must be {typ.__name__}", line_no)

    parent_raw = obj.get("parent_id")
    if parent_raw is not None and not isinstance(parent_raw, str):
        raise SchemaError("field 'parent_id' must be string or null", line_no)

    comment_id = _strip_prefix(obj["id"])
    link_id = _strip_prefix(obj["link_id"])
    parent_id = _strip_prefix(parent_raw) if parent_raw else None
    if parent_id == link_id:
        parent_id = None  # replies to the post itself are top-level
    if not comment_id:
        raise SchemaError("field 'id' must be nonempty", line_no)
    if parent_id == comment_id:
        raise SchemaError("comment cannot be its own parent", line_no)

    body = obj["body"]
    author = obj["author"]
    if not body.strip() or body.strip() in DELETED_MARKERS:
        return SkippedLine("deleted-body")
    if not author.strip() or author.strip() in DELETED_MARKERS:
        return SkippedLine("deleted-author")

    return CommentRecord(
        id=comment_id,
        parent_id=parent_id,
        link_id=link_id,
        author=author,
        body=body,
        score=obj["score"],
        subreddit=obj["subreddit"],
        over_18=obj["over_18"],
        created_utc=obj["created_utc"],
    )


def build_forest(
    records: Iterable[CommentRecord],
    post_id: str,
    stats: Optional[IngestStats] = None,
) -> CommentForest:
    """Assemble one post's records into a reply forest.

    Records whose parent_id is absent or unresolvable within the stream are
    promoted to roots. Duplicate ids and parent cycles are hard errors.
    """
    nodes: dict[str, tuple[CommentRecord, list[str]]] = {}
    for rec in records:
        if rec.id in nodes:
            raise ForestError(f"duplicate comment id {rec.id!r} in post {post_id!r}")
        nodes[rec.id] = (rec, [])

    roots: list[str] = []
    for rec, _ in nodes.values():
        if rec.parent_id is None or rec.parent_id not in nodes:
            if rec.parent_id is not None and stats is not None:
                stats.orphans_promoted += 1
            roots.append(rec.id)
        else:
            nodes[rec.parent_id][1].append(rec.id)

    def sort_key(comment_id: str) -> tuple[int, str]:
        rec = nodes[comment_id][0]
        return (rec.created_utc, rec.id)

    roots.sort(key=sort_key)
    for _, children in nodes.values():
        children.sort(key=sort_key)

    # Anything unreachable from a root sits on a parent cycle.
    seen: set[str] = set()
    stack = list(roots)
    while stack:
        current = stack.pop()
        seen.add(current)
        stack.extend(nodes[current][1])
    if len(seen) != len(nodes):
        cycle_ids = sorted(set(nodes) - seen)
        raise ForestError(
            f"parent cycle in post {post_id!r} involving ids {', '.join(cycle_ids)}"
        )

    if stats is not None:
        stats.forests_built += 1
    return CommentForest(post_id=post_id, nodes=nodes, roots=roots)


def open_dump(path: str) -> IO[str]:
    """Open a dump file, transparently decompressing .gz and .zst."""
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    if path.endswith(".zst"):
        try:
            import zstandard
        except ImportError as exc:
            raise RuntimeError(
                f"cannot read {path}: install the 'zstandard' package for .zst input"
            ) from exc
        import io

        fh = open(path, "rb")
        stream = zstandard.ZstdDecompressor().stream_reader(fh)
        return io.TextIOWrapper(stream, encoding="utf-8")
    return open(path, encoding="utf-8")


def iter_records(path: str, stats: IngestStats) -> Iterator[CommentRecord]:
    try:
        fh = open_dump(path)
    except OSError as exc:
        raise RuntimeError(f"cannot read {path}: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parsed = parse_comment_line(line, line_no)
            if isinstance(parsed, SkippedLine):
                stats.note_skip(parsed.reason)
            else:
                stats.records_read += 1
                yield parsed


def ingest_month(path: str) -> tuple[list[CommentForest], IngestStats]:
    """Read one month's dump and build one forest per post.

    Posts are buffered in memory and emitted in sorted post-id order so that
    parallel upstream producers always merge to the same result. Conversations
    never span input files.
    """
    stats = IngestStats()
    by_post: dict[str, list[CommentRecord]] = {}
    for rec in iter_records(path, stats):
        by_post.setdefault(rec.link_id, []).append(rec)
    forests = [
        build_forest(by_post[post_id], post_id, stats) for post_id in sorted(by_post)
    ]
    return forests, stats
