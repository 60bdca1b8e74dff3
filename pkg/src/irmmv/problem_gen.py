"""Synthetic MMV instances: sensing matrices, row-sparse signals, noise."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DimensionError, SparsityError, UndefinedCoherenceError, UndefinedSNRError
from .matrix_core import DenseMatrix, as_matrix, normalize_columns

NOISELESS = "noiseless"
SNR = Union[float, str]


def is_noiseless(snr_db) -> bool:
    return snr_db is None or (isinstance(snr_db, str) and snr_db.lower() == NOISELESS)


def parse_snr(value) -> SNR:
    """Accept a number, a numeric string, or ``"noiseless"``/``"none"``."""
    if value is None:
        return NOISELESS
    if isinstance(value, str):
        v = value.strip().lower()
        if v in (NOISELESS, "none", "inf"):
            return NOISELESS
        return float(v)
    return float(value)


def generate_sensing_matrix(m: int, n: int, seed: int) -> DenseMatrix:
    """Gaussian ``m x n`` matrix with unit-norm columns."""
    if m < 1 or n < 1:
        raise DimensionError("m and n must be positive")
    rng = np.random.default_rng(seed)
    return normalize_columns(rng.standard_normal((m, n)))


def mu_coherence(a) -> float:
    """Largest absolute inner product between distinct columns."""
    a = as_matrix(a, "a")
    if a.shape[1] < 2:
        raise UndefinedCoherenceError("coherence needs at least two columns")
    gram = np.abs(a.T @ a)
    np.fill_diagonal(gram, 0.0)
    return float(gram.max())


def generate_row_sparse_signal(
    n: int,
    l: int,
    k: int,
    row_magnitudes: Union[Sequence[float], str] = "constant-one",
    seed: int = 0,
):
    """Row-sparse ``n x l`` matrix with ``k`` constant-valued rows.

    Returns
    -------
    x : ndarray, shape (n, l)
    support : ndarray of int
        Sorted indices of the nonzero rows.  Row ``support[j]`` carries
        ``row_magnitudes[j]``.
    """
    if not 1 <= k <= n:
        raise SparsityError(f"need 1 <= k <= n, got k={k}, n={n}")
    if l < 1:
        raise DimensionError("l must be positive")
    if isinstance(row_magnitudes, str):
        if row_magnitudes != "constant-one":
            raise ValueError(f"unknown row_magnitudes {row_magnitudes!r}")
        mags = np.ones(k)
    else:
        mags = np.asarray(row_magnitudes, dtype=float)
        if mags.shape != (k,):
            raise SparsityError(f"expected {k} magnitudes, got {mags.size}")
        if np.any(mags == 0):
            raise SparsityError("support rows must be nonzero")
    rng = np.random.default_rng(seed)
    support = np.sort(rng.choice(n, size=k, replace=False))
    x = np.zeros((n, l))
    x[support] = mags[:, None]
    return x, support


def synthesize_measurements(a, x, snr_db: SNR, seed: int):
    """Return ``(y, w)`` with ``y = a x + w``.

    The Gaussian noise draw is rescaled so the empirical ratio
    ``||a x||^2 / ||w||^2`` equals ``10**(snr_db/10)``.
    """
    a = as_matrix(a, "a")
    x = as_matrix(x, "x")
    if a.shape[1] != x.shape[0]:
        raise DimensionError(f"a is {a.shape}, x is {x.shape}")
    clean = a @ x
    if is_noiseless(snr_db):
        return clean.copy(), np.zeros_like(clean)
    signal = np.linalg.norm(clean)
    if signal == 0.0:
        raise UndefinedSNRError("signal power is zero")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(clean.shape)
    w *= signal / (np.linalg.norm(w) * 10.0 ** (float(snr_db) / 20.0))
    return clean + w, w


def noise_variance(a, x, snr_db: SNR) -> float:
    """Per-entry noise variance implied by an SNR in dB."""
    if is_noiseless(snr_db):
        return 0.0
    clean = as_matrix(a) @ as_matrix(x)
    return float(np.vdot(clean, clean) / (clean.size * 10.0 ** (float(snr_db) / 10.0)))


@dataclass(frozen=True)
class ProblemInstance:
    a: DenseMatrix
    x_true: DenseMatrix
    w: DenseMatrix
    y: DenseMatrix
    support: np.ndarray
    snr_db: SNR
    seed: int

    def __post_init__(self):
        m, n = self.a.shape
        if self.x_true.shape[0] != n or self.y.shape != (m, self.x_true.shape[1]):
            raise DimensionError("inconsistent instance shapes")
        if self.w.shape != self.y.shape:
            raise DimensionError("noise shape differs from measurements")

    @property
    def dims(self):
        """``(M, N, L, K)``."""
        return (self.a.shape[0], self.a.shape[1], self.y.shape[1], len(self.support))

    def check(self, tol: float = 1e-12) -> None:
        """Assert the documented invariants; raises AssertionError on failure."""
        assert np.max(np.abs(self.y - (self.a @ self.x_true + self.w))) <= tol
        off = np.setdiff1d(np.arange(self.x_true.shape[0]), self.support)
        assert not np.any(self.x_true[off])
        assert np.all(np.any(self.x_true[self.support] != 0, axis=1))
        assert np.max(np.abs(np.linalg.norm(self.a, axis=0) - 1.0)) <= tol


def make_instance(
    m: int = 50,
    n: int = 25,
    l: int = 100,
    k: int = 3,
    snr_db: SNR = 40.0,
    seed: int = 0,
    row_magnitudes: Union[Sequence[float], str] = "constant-one",
) -> ProblemInstance:
    """Build a complete instance; the three random draws use child seeds."""
    snr_db = parse_snr(snr_db)
    s_a, s_x, s_w = (
        int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(3)
    )
    a = generate_sensing_matrix(m, n, s_a)
    x, support = generate_row_sparse_signal(n, l, k, row_magnitudes, s_x)
    y, w = synthesize_measurements(a, x, snr_db, s_w)
    return ProblemInstance(a, x, w, y, support, snr_db, seed)


def save_matrix_csv(path, m) -> None:
    """Write ``rows,cols`` header, the dimensions, then one line per row."""
    m = as_matrix(m)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("rows,cols\n")
        fh.write(f"{m.shape[0]},{m.shape[1]}\n")
        for row in m:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_matrix_csv(path) -> DenseMatrix:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "rows,cols":
            raise ValueError(f"{path}: bad header {header!r}")
        rows, cols = (int(v) for v in fh.readline().split(","))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (rows, cols):
        raise DimensionError(f"{path}: expected {(rows, cols)}, found {data.shape}")
    return as_matrix(data)


def save_instance(inst: ProblemInstance, directory) -> None:
    """Archive an instance as one CSV file per matrix plus a metadata file."""
    os.makedirs(directory, exist_ok=True)
    for name in ("a", "x_true", "w", "y"):
        save_matrix_csv(os.path.join(directory, f"{name}.csv"), getattr(inst, name))
    with open(os.path.join(directory, "meta.txt"), "w", encoding="ascii") as fh:
        fh.write(f"snr_db={inst.snr_db}\nseed={inst.seed}\n")
        fh.write("support=" + " ".join(str(int(i)) for i in inst.support) + "\n")


def load_instance(directory) -> ProblemInstance:
    mats = {n: load_matrix_csv(os.path.join(directory, f"{n}.csv")) for n in ("a", "x_true", "w", "y")}
    meta = {}
    with open(os.path.join(directory, "meta.txt"), encoding="ascii") as fh:
        for line in fh:
            key, _, val = line.strip().partition("=")
            meta[key] = val
    support = np.array([int(v) for v in meta["support"].split()], dtype=int)
    return ProblemInstance(
        support=support, snr_db=parse_snr(meta["snr_db"]), seed=int(meta["seed"]), **mats
    )
