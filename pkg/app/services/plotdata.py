"""
Plain CSV files behind every figure and table of a run.

Rendering is left to whatever plotting tool reads them.
"""

import csv
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Sequence, Union

import structlog

from app.core.exceptions import ConfigError, UsageError
from app.repositories import read_json
from app.schemas import AgreementMatrix, AttributionMatrix, EnrichmentProfile, FeatureComparison, TokenRanking

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]
PLOT_KINDS = ("agreement_bubbles", "histograms", "enrichment_table", "ig_heatmap", "top_tokens")


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def agreement_rows(matrix: AgreementMatrix) -> List[List[Any]]:
    """Long format: one (expected, predicted, count) row per cell."""
    return [
        [matrix.labels[i], matrix.labels[j], count]
        for i, row in enumerate(matrix.counts)
        for j, count in enumerate(row)
    ]


def histogram_rows(comparisons: Dict[str, List[FeatureComparison]]) -> List[List[Any]]:
    rows = []
    for method, items in comparisons.items():
        for comparison in items:
            for hist in (comparison.real, comparison.generated):
                for b, count in enumerate(hist.counts):
                    rows.append([
                        method,
                        comparison.feature,
                        "" if comparison.author is None else comparison.author,
                        hist.population,
                        hist.edges[b],
                        hist.edges[b + 1],
                        count,
                    ])
    return rows


def enrichment_table(profiles: Dict[str, EnrichmentProfile]) -> List[List[str]]:
    """Layer rows and tag columns with ``mass (xenrichment)`` cells."""
    tags = list(profiles)
    depth = max((len(p.layers) for p in profiles.values()), default=0)
    rows = []
    for layer in range(depth):
        row = [str(layer)]
        for tag in tags:
            entry = profiles[tag].layers[layer]
            row.append(f"{entry.to_tag_mass:.2f} (×{entry.enrichment:.1f})")
        rows.append(row)
    return [["layer"] + tags] + rows


def _agreement(source: Path, out_dir: Path) -> List[Path]:
    matrix = AgreementMatrix.model_validate(read_json(source))
    return [_write_csv(out_dir / "agreement_bubbles.csv", ["expected", "predicted", "count"], agreement_rows(matrix))]


def _histograms(source: Path, out_dir: Path) -> List[Path]:
    data = read_json(source)
    comparisons = {
        method: [FeatureComparison.model_validate(c) for c in items]
        for method, items in data["comparisons"].items()
    }
    header = ["method", "feature", "author", "population", "bin_left", "bin_right", "count"]
    return [_write_csv(out_dir / "histograms.csv", header, histogram_rows(comparisons))]


def _enrichment(source: Path, out_dir: Path) -> List[Path]:
    data = read_json(source)
    profiles = {tag: EnrichmentProfile.model_validate(p) for tag, p in data["profiles"].items()}
    table = enrichment_table(profiles)
    return [_write_csv(out_dir / "enrichment_table.csv", table[0], table[1:])]


def _heatmaps(source: Path, out_dir: Path) -> List[Path]:
    written = []
    for index, raw in enumerate(read_json(source)):
        matrix = AttributionMatrix.model_validate(raw)
        rows = [[token] + list(values) for token, values in zip(matrix.prompt_tokens, matrix.A)]
        written.append(_write_csv(out_dir / f"ig_heatmap_{index}.csv", ["prompt_token"] + matrix.generated_tokens, rows))
    return written


def _top_tokens(source: Path, out_dir: Path) -> List[Path]:
    rows = []
    for raw in read_json(source):
        ranking = TokenRanking.model_validate(raw)
        for rank, entry in enumerate(ranking.entries, start=1):
            rows.append([ranking.author, rank, entry.token, entry.mean_attribution, entry.mean_magnitude, entry.support])
    header = ["author", "rank", "token", "mean_attribution", "mean_magnitude", "support"]
    return [_write_csv(out_dir / "top_tokens.csv", header, rows)]


EMITTERS: Dict[str, Callable[[Path, Path], List[Path]]] = {
    "agreement_bubbles": _agreement,
    "histograms": _histograms,
    "enrichment_table": _enrichment,
    "ig_heatmap": _heatmaps,
    "top_tokens": _top_tokens,
}


def emit_plot_data(report: PathLike, kind: str, out_dir: PathLike) -> List[Path]:
    """
    Turn a stage report into CSV files for one figure type.

    Args:
        report: ``agreement.json``, ``histograms.json``, ``enrichment.json``,
            ``ig_heatmaps.json`` or ``top_tokens.json``
        kind: One of ``PLOT_KINDS``
        out_dir: Destination folder

    Returns:
        Paths of the written files

    Raises:
        UsageError: unknown kind
        ConfigError: the report is not the JSON shape the kind expects
    """
    if kind not in EMITTERS:
        raise UsageError("unknown plot kind", kind=kind, known=list(PLOT_KINDS))
    try:
        written = EMITTERS[kind](Path(report), Path(out_dir))
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError("malformed report", path=str(report), kind=kind, error=repr(exc))
    logger.info("Plot data written", kind=kind, files=len(written))
    return written
