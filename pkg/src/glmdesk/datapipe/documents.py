"""Corpus records and their JSONL form (one object per line: id, url, text, meta)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from ..errors import DataError


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    url: str | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"id": self.id, "url": self.url, "text": self.text, "meta": self.meta}


def dumps_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records)


def parse_document(obj, lineno: int = 0) -> Document:
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    if not isinstance(obj.get("id"), (str, int)) or not isinstance(obj.get("text"), str):
        raise DataError(f"line {lineno}: document needs string 'id' and 'text'")
    url = obj.get("url")
    if url is not None and not isinstance(url, str):
        raise DataError(f"line {lineno}: 'url' must be a string or null")
    meta = obj.get("meta") or {}
    if not isinstance(meta, dict):
        raise DataError(f"line {lineno}: 'meta' must be an object")
    return Document(str(obj["id"]), obj["text"], url, meta)


def iter_jsonl(path) -> Iterator[tuple[int, object]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc


def read_documents(path) -> list[Document]:
    docs = []
    seen = set()
    for lineno, obj in iter_jsonl(path):
        doc = parse_document(obj, lineno)
        if doc.id in seen:
            raise DataError(f"{path}:{lineno}: duplicate document id {doc.id!r}")
        seen.add(doc.id)
        docs.append(doc)
    return docs


def write_documents(path, docs: Iterable[Document]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_jsonl(d.to_dict() for d in docs))
