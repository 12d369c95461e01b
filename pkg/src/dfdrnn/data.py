"""Dataset loading, validation, and persistence.

A dataset is a JSON manifest pointing at five TSV/text files: drug IDs and
disease IDs (one per line), two square similarity matrices, and the binary
association matrix.  Paths in the manifest resolve relative to the manifest
file.  All numbers are parsed as float64.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MANIFEST_KEYS = ("drug_ids", "disease_ids", "drug_sim", "disease_sim", "associations")

DIAG_TOL = 1e-9


class DatasetError(ValueError):
    """Raised for malformed dataset files; carries file/row/column context."""

    def __init__(self, message, *, file=None, row=None, col=None):
        where = []
        if file is not None:
            where.append(f"file {file}")
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"column {col}")
        if where:
            message = f"{message} ({', '.join(where)}; rows/columns are 1-based)"
        super().__init__(message)
        self.file = file
        self.row = row
        self.col = col


@dataclass(frozen=True)
class EntityIds:
    """Ordered drug and disease identifiers; defines n and m."""

    drug_ids: tuple[str, ...]
    disease_ids: tuple[str, ...]

    def __post_init__(self):
        for name, ids in (("drug", self.drug_ids), ("disease", self.disease_ids)):
            if len(ids) < 1:
                raise DatasetError(f"need at least one {name} ID")
            if len(set(ids)) != len(ids):
                raise DatasetError(f"duplicate {name} IDs")

    @property
    def n_drugs(self):
        return len(self.drug_ids)

    @property
    def n_diseases(self):
        return len(self.disease_ids)


@dataclass(frozen=True)
class SimilarityMatrix:
    """Square matrix of pairwise similarities in [0, 1] with unit diagonal."""

    values: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DatasetError(f"similarity matrix must be square, got {v.shape}")
        if v.shape[0] != len(self.ids):
            raise DatasetError(
                f"similarity matrix is {v.shape[0]}x{v.shape[1]} but there are {len(self.ids)} IDs"
            )


@dataclass(frozen=True)
class AssociationMatrix:
    """Binary drug-by-disease association matrix."""

    values: np.ndarray
    ids: EntityIds

    def __post_init__(self):
        v = self.values
        expected = (self.ids.n_drugs, self.ids.n_diseases)
        if v.shape != expected:
            raise DatasetError(f"association matrix is {v.shape}, expected {expected}")

    @property
    def n_positive(self):
        return int(self.values.sum())


@dataclass(frozen=True)
class Dataset:
    ids: EntityIds
    drug_sim: SimilarityMatrix
    disease_sim: SimilarityMatrix
    assoc: AssociationMatrix
    name: str = "dataset"

    @property
    def n_drugs(self):
        return self.ids.n_drugs

    @property
    def n_diseases(self):
        return self.ids.n_diseases


def _read_ids(path: Path) -> tuple[str, ...]:
    if not path.is_file():
        raise DatasetError("ID file not found", file=str(path))
    lines = path.read_text().splitlines()
    ids = [line.strip() for line in lines]
    if ids and ids[-1] == "":
        ids.pop()
    for i, entry in enumerate(ids):
        if entry == "":
            raise DatasetError("empty ID", file=str(path), row=i + 1)
    return tuple(ids)


def _read_matrix(path: Path) -> np.ndarray:
    """Parse a headerless numeric TSV; on failure, locate the bad cell."""
    if not path.is_file():
        raise DatasetError("matrix file not found", file=str(path))
    try:
        values = np.loadtxt(path, delimiter="\t", dtype=np.float64, ndmin=2)
        return values
    except ValueError:
        pass
    rows = []
    width = None
    with path.open() as fh:
        for r, line in enumerate(fh):
            cells = line.rstrip("\n").split("\t")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DatasetError(
                    f"ragged row: {len(cells)} cells, expected {width}",
                    file=str(path),
                    row=r + 1,
                )
            parsed = []
            for c, cell in enumerate(cells):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DatasetError(
                        f"non-numeric cell {cell!r}", file=str(path), row=r + 1, col=c + 1
                    ) from None
            rows.append(parsed)
    return np.array(rows, dtype=np.float64, ndmin=2)


def _first_bad(mask: np.ndarray):
    r, c = np.argwhere(mask)[0]
    return int(r), int(c)


def _check_similarity(values: np.ndarray, n: int, path: str, what: str) -> None:
    if values.shape != (n, n):
        raise DatasetError(
            f"{what} similarity is {values.shape[0]}x{values.shape[1]}, expected {n}x{n}",
            file=path,
        )
    bad = (values < 0.0) | (values > 1.0) | ~np.isfinite(values)
    if bad.any():
        r, c = _first_bad(bad)
        raise DatasetError(
            f"similarity entry {values[r, c]} outside [0, 1]", file=path, row=r + 1, col=c + 1
        )
    off_diag = np.abs(np.diag(values) - 1.0) > DIAG_TOL
    if off_diag.any():
        r = int(np.argwhere(off_diag)[0][0])
        raise DatasetError(
            f"diagonal entry {values[r, r]} is not 1 (self-similarity must be maximal)",
            file=path,
            row=r + 1,
            col=r + 1,
        )
    if not np.array_equal(values, values.T):
        warnings.warn(
            f"{what} similarity matrix in {path} is asymmetric; rows are used as-is",
            stacklevel=3,
        )


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset from its JSON manifest, checking all invariants.

    Deterministic: the same files always produce identical in-memory values.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DatasetError("manifest not found", file=str(manifest_path))
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest is not valid JSON: {exc}", file=str(manifest_path))
    missing = [key for key in MANIFEST_KEYS if key not in manifest]
    if missing:
        raise DatasetError(
            f"manifest missing keys: {', '.join(missing)}", file=str(manifest_path)
        )
    base = manifest_path.parent
    paths = {key: base / manifest[key] for key in MANIFEST_KEYS}

    ids = EntityIds(_read_ids(paths["drug_ids"]), _read_ids(paths["disease_ids"]))
    n, m = ids.n_drugs, ids.n_diseases

    drug_values = _read_matrix(paths["drug_sim"])
    _check_similarity(drug_values, n, str(paths["drug_sim"]), "drug")
    disease_values = _read_matrix(paths["disease_sim"])
    _check_similarity(disease_values, m, str(paths["disease_sim"]), "disease")

    assoc_values = _read_matrix(paths["associations"])
    if assoc_values.shape != (n, m):
        raise DatasetError(
            f"association matrix is {assoc_values.shape[0]}x{assoc_values.shape[1]}, "
            f"expected {n}x{m}",
            file=str(paths["associations"]),
        )
    bad = (assoc_values != 0.0) & (assoc_values != 1.0)
    if bad.any():
        r, c = _first_bad(bad)
        raise DatasetError(
            f"association entry {assoc_values[r, c]} not in {{0, 1}}",
            file=str(paths["associations"]),
            row=r + 1,
            col=c + 1,
        )

    return Dataset(
        ids=ids,
        drug_sim=SimilarityMatrix(drug_values, ids.drug_ids),
        disease_sim=SimilarityMatrix(disease_values, ids.disease_ids),
        assoc=AssociationMatrix(assoc_values, ids),
        name=str(manifest.get("name", manifest_path.stem)),
    )


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    severity: str  # "error" | "warning" | "info"
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]
    density: float
    zero_assoc_drugs: int
    zero_assoc_diseases: int

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.severity == "error")

    def lines(self):
        for c in self.checks:
            status = "PASS" if c.passed else ("WARN" if c.severity == "warning" else "FAIL")
            yield f"[{status}] {c.name}: {c.detail}"
        yield f"[INFO] association density: {self.density:.6f}"
        yield f"[INFO] drugs with zero associations: {self.zero_assoc_drugs}"
        yield f"[INFO] diseases with zero associations: {self.zero_assoc_diseases}"


def validate_dataset(d: Dataset) -> ValidationReport:
    """Report-only consistency checks (symmetry violations are warnings)."""
    checks = []
    for what, sim in (("drug", d.drug_sim), ("disease", d.disease_sim)):
        v = sim.values
        symmetric = bool(np.array_equal(v, v.T))
        checks.append(
            CheckResult(
                f"{what}_sim_symmetry",
                symmetric,
                "warning",
                "symmetric" if symmetric else "asymmetric (accepted; rows used as-is)",
            )
        )
        diag_ok = bool(np.all(np.abs(np.diag(v) - 1.0) <= DIAG_TOL))
        checks.append(
            CheckResult(
                f"{what}_sim_diagonal",
                diag_ok,
                "error",
                "all 1.0" if diag_ok else "diagonal deviates from 1.0",
            )
        )
        in_range = bool(np.all((v >= 0.0) & (v <= 1.0)))
        if in_range:
            detail = "all entries in [0, 1]"
        else:
            r, c = _first_bad((v < 0.0) | (v > 1.0))
            detail = f"entry ({r + 1}, {c + 1}) = {v[r, c]} outside [0, 1]"
        checks.append(CheckResult(f"{what}_sim_range", in_range, "error", detail))

    a = d.assoc.values
    binary = bool(np.all((a == 0.0) | (a == 1.0)))
    checks.append(
        CheckResult("assoc_binary", binary, "error", "all entries in {0, 1}" if binary else "non-binary entries")
    )
    density = float(a.sum() / a.size)
    return ValidationReport(
        checks=tuple(checks),
        density=density,
        zero_assoc_drugs=int(np.sum(a.sum(axis=1) == 0)),
        zero_assoc_diseases=int(np.sum(a.sum(axis=0) == 0)),
    )


_FILENAMES = {
    "drug_ids": "drug_ids.txt",
    "disease_ids": "disease_ids.txt",
    "drug_sim": "drug_sim.tsv",
    "disease_sim": "disease_sim.tsv",
    "associations": "associations.tsv",
}


def write_dataset(d: Dataset, directory) -> Path:
    """Write a dataset in the manifest layout; returns the manifest path.

    Floats are written with 17 significant digits so load(write(d)) is a
    bit-for-bit round trip.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / _FILENAMES["drug_ids"]).write_text("\n".join(d.ids.drug_ids) + "\n")
    (directory / _FILENAMES["disease_ids"]).write_text("\n".join(d.ids.disease_ids) + "\n")
    np.savetxt(directory / _FILENAMES["drug_sim"], d.drug_sim.values, fmt="%.17g", delimiter="\t")
    np.savetxt(
        directory / _FILENAMES["disease_sim"], d.disease_sim.values, fmt="%.17g", delimiter="\t"
    )
    np.savetxt(directory / _FILENAMES["associations"], d.assoc.values, fmt="%d", delimiter="\t")
    manifest = dict(_FILENAMES)
    manifest["name"] = d.name
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path
