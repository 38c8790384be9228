"""Dense float64 linear algebra and splittable, counter-based random streams.

Matrices are plain 2-D ``numpy.ndarray`` values in row-major float64. Every
exposed operation validates shapes and finiteness so downstream modules can
assume well-formed inputs. Randomness is organized as value-like streams: a
:class:`RngStream` is an immutable key (master seed plus client/round/epoch/
purpose coordinates) from which a fresh counter-based generator is derived on
every use, so identical keys always reproduce identical sequences no matter
how many workers run concurrently or in what order.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParseError, ShapeError

Matrix = np.ndarray


def as_matrix(values, name: str = "matrix") -> Matrix:
    """Coerce to a finite, 2-D float64 array; raise ShapeError otherwise."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ShapeError(f"{name} contains non-finite entries")
    return m


def check_finite(m: Matrix, name: str = "result") -> Matrix:
    if not np.all(np.isfinite(m)):
        raise ShapeError(f"{name} contains non-finite entries")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product a @ b."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return check_finite(a @ b)


def frobenius_inner(a: Matrix, b: Matrix) -> float:
    """Entrywise inner product sum_ij a_ij * b_ij."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def frobenius_norm(a: Matrix) -> float:
    return float(np.sqrt(frobenius_inner(a, a)))


def add_scaled(a: Matrix, b: Matrix, alpha: float) -> Matrix:
    """Entrywise a + alpha * b."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    return check_finite(a + alpha * b)


@dataclass(frozen=True)
class RngStream:
    """Immutable key for a counter-based random stream.

    The stream identity is ``(master_seed, client, round, epoch, purpose)``.
    Deriving a generator hashes the full key, so distinct keys yield
    statistically independent streams and the same key always yields the
    same sequence. Streams are values: pass them around freely, no state
    is consumed by use.
    """

    master_seed: int
    client: int = 0
    round: int = 0
    epoch: int = 0
    purpose: str = ""

    def child(self, **coords) -> "RngStream":
        """Derived stream with some coordinates replaced."""
        return replace(self, **coords)

    def with_purpose(self, purpose: str) -> "RngStream":
        return replace(self, purpose=purpose)

    def sub(self, tag: str) -> "RngStream":
        """Independent sub-stream scoped under the current purpose."""
        return replace(self, purpose=f"{self.purpose}/{tag}")

    def _key(self) -> int:
        raw = f"{self.master_seed}|{self.client}|{self.round}|{self.epoch}|{self.purpose}"
        digest = hashlib.sha256(raw.encode("utf-8")).digest()
        return int.from_bytes(digest[:16], "little")

    def generator(self) -> np.random.Generator:
        """Fresh generator for this key; repeated calls restart the sequence."""
        return np.random.Generator(np.random.Philox(key=self._key()))


def gaussian_sample(
    stream: RngStream, rows: int, cols: int, mean: float = 0.0, stddev: float = 1.0
) -> Matrix:
    """i.i.d. normal entries, reproducible per stream."""
    if stddev < 0:
        raise ShapeError(f"stddev must be >= 0, got {stddev}")
    if rows < 1 or cols < 1:
        raise ShapeError(f"invalid matrix shape ({rows}, {cols})")
    out = stream.generator().normal(loc=mean, scale=stddev, size=(rows, cols))
    return check_finite(out)


def matrix_to_csv(m: Matrix) -> str:
    """One row per line, comma-separated, '.'-decimal, no header.

    Uses shortest round-trip float formatting so serialize/parse is exact.
    """
    m = as_matrix(m)
    lines = [",".join(repr(v) for v in row) for row in m.tolist()]
    return "\n".join(lines) + "\n"


def matrix_from_csv(text: str) -> Matrix:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            row = [float(c) for c in cells]
        except ValueError as exc:
            raise ParseError(f"non-numeric cell ({exc})", line=lineno) from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(
                f"expected {width} columns, got {len(row)}", line=lineno
            )
        rows.append(row)
    if not rows:
        raise ParseError("no rows found")
    return as_matrix(rows)


def save_matrix_csv(m: Matrix, path) -> None:
    with io.open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(matrix_to_csv(m))


def load_matrix_csv(path) -> Matrix:
    with io.open(path, "r", encoding="utf-8") as fh:
        return matrix_from_csv(fh.read())
