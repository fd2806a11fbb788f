import logging
from pathlib import Path

import scipy.io

from linalg.exceptions import MatrixMarketError
from linalg.sparse import as_csr

logger = logging.getLogger(__name__)

# 17 digits after the point is enough to round-trip every double.
PRINT_PRECISION = 17


def write_matrix_market(M, path, comment=""):
    """
    Write ``M`` as ``%%MatrixMarket matrix coordinate real general``
    (1-based indices). Symmetric matrices are still written as general so
    every stored entry appears in the file.
    """
    M = as_csr(M)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        scipy.io.mmwrite(
            fh,
            M.tocoo(),
            comment=comment,
            field="real",
            precision=PRINT_PRECISION,
            symmetry="general",
        )
    logger.info(f"Wrote {M.shape[0]}x{M.shape[1]} matrix ({M.nnz} entries) to {path}")
    return path


def read_matrix_market(path):
    """
    Read a coordinate MatrixMarket file into canonical CSR form.

    Duplicate entries are summed, as the format prescribes.
    """
    path = Path(path)
    if not path.is_file():
        raise MatrixMarketError(f"File not found: {path}")

    try:
        rows, cols, entries, fmt, field, symmetry = scipy.io.mminfo(str(path))
    except (ValueError, IndexError, TypeError) as exc:
        raise MatrixMarketError(f"Malformed MatrixMarket header in {path}: {exc}") from exc

    if fmt != "coordinate":
        raise MatrixMarketError(f"{path}: expected coordinate format, found '{fmt}'")
    if field not in ("real", "integer", "pattern"):
        raise MatrixMarketError(f"{path}: unsupported field '{field}'")

    try:
        coo = scipy.io.mmread(str(path))
    except (ValueError, RuntimeError, IndexError, TypeError, OverflowError) as exc:
        raise MatrixMarketError(f"Inconsistent MatrixMarket body in {path}: {exc}") from exc

    if symmetry == "general" and coo.nnz != entries:
        raise MatrixMarketError(
            f"{path}: header announces {entries} entries but {coo.nnz} were read"
        )

    M = as_csr(coo)
    logger.debug(f"Read {rows}x{cols} matrix from {path} ({entries} file entries, {M.nnz} stored)")
    return M
