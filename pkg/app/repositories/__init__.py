"""
Repository layer for file-backed data access.

Each repository is bound to a directory the way a SQL repository is bound to a
session. Records are stored as JSON lines, one pydantic model per line.
"""

import hashlib
import json
import os
import shutil
import uuid
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Type, TypeVar, Union

import structlog
from pydantic import BaseModel

from app.core.exceptions import ConfigError
from app.schemas import (
    AgreementMatrix,
    Corpus,
    CorpusManifest,
    FilteredReport,
    GeneratedItem,
    GeneratedSet,
    Prediction,
    RunManifest,
    SentenceRecord,
    TagScheme,
    default_scheme,
)

logger = structlog.get_logger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)
PathLike = Union[str, Path]

MANIFEST_FILE = "run_manifest.json"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_tree(root: PathLike, exclude: Iterable[str] = (MANIFEST_FILE,)) -> Dict[str, str]:
    """SHA-256 of every file below ``root``, keyed by POSIX relative path."""
    root = Path(root)
    skipped = set(exclude)
    hashes = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name not in skipped:
            hashes[path.relative_to(root).as_posix()] = sha256_file(path)
    return hashes


def write_jsonl(path: PathLike, items: Iterable[BaseModel]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for item in items:
            handle.write(item.model_dump_json(exclude_none=True) + "\n")
            count += 1
    return count


def read_jsonl(path: PathLike, model: Type[ModelT]) -> List[ModelT]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("input file not found", path=str(path))
    items = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                items.append(model.model_validate_json(line))
            except ValueError as exc:
                raise ConfigError("invalid record", path=str(path), line=line_no, error=str(exc))
    return items


def write_json(path: PathLike, data: Union[BaseModel, Dict[str, Any], List[Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, BaseModel):
        text = data.model_dump_json(indent=2)
    else:
        text = json.dumps(data, indent=2, ensure_ascii=False, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")


def read_json(path: PathLike) -> Any:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("input file not found", path=str(path))
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("invalid JSON", path=str(path), error=str(exc))


def read_parse_sidecar(path: PathLike) -> Dict[str, str]:
    """Map sentence text to its bracketed parse from ``{"text", "parse"}`` lines."""
    parses: Dict[str, str] = {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError("parse sidecar not found", path=str(path))
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                row = json.loads(line)
                parses[row["text"]] = row["parse"]
    return parses


class CorpusRepository:
    """``corpus.jsonl``, ``manifest.json`` and ``scheme.json`` in one directory."""

    def __init__(self, root: PathLike):
        self.root = Path(root)

    @property
    def records_path(self) -> Path:
        return self.root / "corpus.jsonl"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def scheme_path(self) -> Path:
        return self.root / "scheme.json"

    def save(self, corpus: Corpus, manifest: Optional[CorpusManifest] = None) -> None:
        write_jsonl(self.records_path, corpus.records)
        corpus.scheme.dump(self.scheme_path)
        if manifest is not None:
            write_json(self.manifest_path, manifest)
        logger.info("Corpus saved", path=str(self.records_path), records=len(corpus.records))

    def load(self) -> Corpus:
        records = read_jsonl(self.records_path, SentenceRecord)
        scheme = TagScheme.load(self.scheme_path) if self.scheme_path.exists() else default_scheme()
        provenance: Dict[str, str] = {}
        if self.manifest_path.exists():
            provenance = CorpusManifest.model_validate(read_json(self.manifest_path)).provenance
        return Corpus(records=records, scheme=scheme, provenance=provenance)

    @classmethod
    def from_file(cls, path: PathLike) -> "CorpusRepository":
        """Accept either the directory or the ``corpus.jsonl`` path."""
        path = Path(path)
        return cls(path.parent if path.suffix == ".jsonl" else path)


class GeneratedRepository:
    """Accepted generations plus their acceptance report."""

    def __init__(self, root: PathLike):
        self.root = Path(root)

    def items_path(self, method: str) -> Path:
        return self.root / f"generated_{method}.jsonl"

    def report_path(self, method: str) -> Path:
        return self.root / f"generation_report_{method}.json"

    def save(self, generated: GeneratedSet) -> Path:
        path = self.items_path(generated.method)
        write_jsonl(path, generated.items)
        write_json(self.report_path(generated.method), generated.model_dump(mode="json", exclude={"items"}))
        return path

    def load(self, method: str) -> GeneratedSet:
        return self.load_file(self.items_path(method), method)

    @staticmethod
    def load_file(path: PathLike, method: Optional[str] = None) -> GeneratedSet:
        items = read_jsonl(path, GeneratedItem)
        per_author: Dict[int, int] = {}
        for item in items:
            per_author[item.author] = per_author.get(item.author, 0) + 1
        label = method or (items[0].method if items else Path(path).stem.removeprefix("generated_"))
        return GeneratedSet(items=items, method=label, per_author_counts=per_author)


class PredictionRepository:
    """Per-sentence predictions and the reports derived from them."""

    def __init__(self, root: PathLike):
        self.root = Path(root)

    def save(
        self,
        name: str,
        predictions: List[Prediction],
        agreement: Optional[AgreementMatrix] = None,
        filtered: Optional[FilteredReport] = None,
    ) -> None:
        target = self.root / name
        write_jsonl(target / "predictions.jsonl", predictions)
        if agreement is not None:
            write_json(target / "agreement.json", agreement)
        if filtered is not None:
            write_json(target / "filtered_report.json", filtered)

    def load_predictions(self, name: str) -> List[Prediction]:
        return read_jsonl(self.root / name / "predictions.jsonl", Prediction)

    def load_agreement(self, name: str) -> AgreementMatrix:
        return AgreementMatrix.model_validate(read_json(self.root / name / "agreement.json"))


class CheckpointRepository:
    """Named checkpoint directories below one root."""

    def __init__(self, root: PathLike):
        self.root = Path(root)

    def path_for(self, name: str) -> Path:
        return self.root / name

    def exists(self, name: str) -> bool:
        return (self.path_for(name) / "config.json").is_file()

    def names(self) -> List[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / "config.json").is_file())


class ManifestRepository:
    """``run_manifest.json`` for every stage directory."""

    def __init__(self, out_dir: PathLike):
        self.out_dir = Path(out_dir)

    def write(self, directory: PathLike, manifest: RunManifest) -> Path:
        path = Path(directory) / MANIFEST_FILE
        write_json(path, manifest)
        return path

    def write_failure(self, manifest: RunManifest) -> Path:
        """Failed stages leave their directory untouched; the manifest goes beside it."""
        path = self.out_dir / f"{manifest.stage}.failed.json"
        write_json(path, manifest)
        return path

    def read(self, stage: str) -> RunManifest:
        return RunManifest.model_validate(read_json(self.out_dir / stage / MANIFEST_FILE))

    def clear_failure(self, stage: str) -> None:
        path = self.out_dir / f"{stage}.failed.json"
        if path.exists():
            path.unlink()


class StageWorkspace:
    """
    Build a stage's outputs in a temporary sibling directory and swap it in on success.

    On any exception the temporary directory is removed and the previous outputs,
    if any, stay as they were.
    """

    def __init__(self, final_dir: PathLike):
        self.final_dir = Path(final_dir)
        self.tmp_dir = self.final_dir.with_name(f".{self.final_dir.name}.tmp-{uuid.uuid4().hex[:8]}")

    def __enter__(self) -> Path:
        self.final_dir.parent.mkdir(parents=True, exist_ok=True)
        self.tmp_dir.mkdir()
        return self.tmp_dir

    def __exit__(self, exc_type: Any, exc: Any, tb: Any) -> bool:
        if exc_type is not None:
            shutil.rmtree(self.tmp_dir, ignore_errors=True)
            return False
        backup = self.final_dir.with_name(f".{self.final_dir.name}.old-{uuid.uuid4().hex[:8]}")
        if self.final_dir.exists():
            os.replace(self.final_dir, backup)
        os.replace(self.tmp_dir, self.final_dir)
        shutil.rmtree(backup, ignore_errors=True)
        return False


__all__ = [
    "CheckpointRepository",
    "CorpusRepository",
    "GeneratedRepository",
    "MANIFEST_FILE",
    "ManifestRepository",
    "PredictionRepository",
    "StageWorkspace",
    "hash_tree",
    "read_json",
    "read_jsonl",
    "read_parse_sidecar",
    "sha256_bytes",
    "sha256_file",
    "write_json",
    "write_jsonl",
]
