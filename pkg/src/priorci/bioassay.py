"""Two-compound quantal bioassay data and the matching logit model."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .regmodel import BinomialLogitModel, bioassay_functionals

__all__ = ["BioassayDataset", "DatasetError", "morphine_amidone", "load_dataset", "parse_dataset", "bioassay_spec",
           "parse_binomial"]

HEADER = ("x", "n", "r", "n_prime", "r_prime")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BioassayDataset:
    """Quantal responses of two compounds at common log10 doses.

    ``n, r`` belong to the first compound and ``n_prime, r_prime`` to the
    second.
    """

    x: np.ndarray
    n: np.ndarray
    r: np.ndarray
    n_prime: np.ndarray
    r_prime: np.ndarray
    labels: tuple[str, str] = ("Morphine", "Amidone")

    def __post_init__(self):
        for name in HEADER:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        m = self.x.size
        if any(getattr(self, k).shape != (m,) for k in HEADER):
            raise DatasetError("all columns must have the same length")
        for k, (nn, rr) in enumerate(zip(self.n, self.r), 1):
            if not (nn >= 1 and 0 <= rr <= nn):
                raise DatasetError(f"row {k}: need 0 <= r <= n with n >= 1")
        for k, (nn, rr) in enumerate(zip(self.n_prime, self.r_prime), 1):
            if not (nn >= 1 and 0 <= rr <= nn):
                raise DatasetError(f"row {k}: need 0 <= r_prime <= n_prime with n_prime >= 1")
        if np.unique(self.x).size < 2:
            raise DatasetError("at least two distinct doses are needed per compound")

    @property
    def design(self) -> np.ndarray:
        one, zero = np.ones_like(self.x), np.zeros_like(self.x)
        top = np.column_stack([one, self.x, zero, zero])
        bottom = np.column_stack([zero, zero, one, self.x])
        return np.vstack([top, bottom])

    @property
    def trials(self) -> np.ndarray:
        return np.concatenate([self.n, self.n_prime])

    @property
    def successes(self) -> np.ndarray:
        return np.concatenate([self.r, self.r_prime])

    def to_text(self) -> str:
        lines = [" ".join(HEADER)]
        for row in zip(self.x, self.n, self.r, self.n_prime, self.r_prime):
            lines.append(f"{row[0]:.12g} {int(row[1])} {int(row[2])} {int(row[3])} {int(row[4])}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def parse_dataset(text: str) -> BioassayDataset:
    """Parse whitespace- or comma-delimited text with header ``x n r n_prime r_prime``.

    Lines starting with ``#`` and blank lines are ignored.  Errors name the
    offending line.
    """
    rows, header = [], None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.replace(",", " ").split()
        if header is None:
            if tuple(fields) != HEADER:
                raise DatasetError(f"line {lineno}: expected header '{' '.join(HEADER)}'")
            header = fields
            continue
        if len(fields) != 5:
            raise DatasetError(f"line {lineno}: expected 5 fields, got {len(fields)}")
        try:
            x = float(fields[0])
            counts = [int(f) for f in fields[1:]]
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
        n, r, n2, r2 = counts
        if not (n >= 1 and 0 <= r <= n and n2 >= 1 and 0 <= r2 <= n2):
            raise DatasetError(f"line {lineno}: counts must satisfy 0 <= r <= n, n >= 1")
        rows.append((x, n, r, n2, r2))
    if header is None:
        raise DatasetError("missing header line")
    if not rows:
        raise DatasetError("no data rows")
    cols = list(zip(*rows))
    return BioassayDataset(*cols)


def load_dataset(path: str | Path) -> BioassayDataset:
    return parse_dataset(Path(path).read_text())


def morphine_amidone() -> BioassayDataset:
    """The embedded Morphine/Amidone data set."""
    text = resources.files("priorci").joinpath("data/morphine_amidone.txt").read_text()
    return parse_dataset(text)


def bioassay_spec(data: BioassayDataset, z: float = 60.0, t: float = 0.0, y=None) -> BinomialLogitModel:
    """Two independent logit lines with g = ED_z - ED'_z and h = beta2 - beta4."""
    g, h = bioassay_functionals(z)
    return BinomialLogitModel(X=data.design, y=data.successes if y is None else y, g=g, h=h, t=t,
                              N=data.trials)


def parse_binomial(text: str, g=None, h=None, t: float = 0.0) -> BinomialLogitModel:
    """Generic binomial data, one row ``n y x1 x2 ...`` per observation.

    The header line starts with ``n y``; covariate names are free.  No
    intercept column is added.
    """
    rows, width = [], None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.replace(",", " ").split()
        if width is None:
            if fields[:2] != ["n", "y"] or len(fields) < 3:
                raise DatasetError(f"line {lineno}: expected header 'n y x1 ...'")
            width = len(fields)
            continue
        if len(fields) != width:
            raise DatasetError(f"line {lineno}: expected {width} fields, got {len(fields)}")
        try:
            n, y = int(fields[0]), int(fields[1])
            x = [float(f) for f in fields[2:]]
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
        if not (n >= 1 and 0 <= y <= n):
            raise DatasetError(f"line {lineno}: counts must satisfy 0 <= y <= n, n >= 1")
        rows.append((n, y, x))
    if not rows:
        raise DatasetError("no data rows")
    return BinomialLogitModel(X=np.array([r[2] for r in rows]), y=np.array([r[1] for r in rows], dtype=float),
                              g=g, h=h, t=t, N=np.array([r[0] for r in rows], dtype=float))
