"""Uniform spherical sampling, observation streams and Monte-Carlo measure oracles.

Observations are generated in fixed-size blocks. Block ``b`` of a run with
seed ``s`` draws from a Philox generator keyed by ``(s, b)``, so the stream is
identical whatever the worker count or the order in which blocks are made.
"""

from __future__ import annotations

import csv
import hashlib
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .errors import DimensionMismatch, IoFailure, SingularMatrix
from .systems import SwitchedSystem

BLOCK = 65536
MAGIC = b"SUBSCOUT"
VERSION = 1
HEADER = struct.Struct("<8sIIQQI")  # magic, version, n, N, seed, flags; padded to 64 bytes
HEADER_SIZE = 64
FLAG_MODES = 1


def default_threads() -> int:
    env = os.environ.get("SUBSPACE_SCOUT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Generator for one block; the 128-bit Philox key is ``seed | block << 64``."""
    seed = int(seed) & (2**64 - 1)
    return np.random.Generator(np.random.Philox(key=seed | (int(block) << 64)))


def sample_uniform_sphere(n: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform point(s) on the unit sphere in R^n via normalised Gaussian draws."""
    if n < 1:
        raise ValueError("n must be at least 1")
    shape = (n,) if size is None else (size, n)
    while True:
        g = rng.standard_normal(shape)
        norms = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.all(norms > 0):
            return g / norms


@dataclass
class Block:
    start: int
    X: np.ndarray
    Y: np.ndarray
    modes: np.ndarray | None = None  # 1-based, white-box only


class ObservationSet:
    """Iterable collection of one-step pairs ``(x_i, y_i)`` delivered in blocks."""

    n: int
    N: int

    def blocks(self, threads=1):
        raise NotImplementedError

    def arrays(self):
        """Materialise ``(X, Y)``; only sensible for moderate N."""
        X = np.empty((self.N, self.n))
        Y = np.empty((self.N, self.n))
        for b in self.blocks():
            X[b.start : b.start + len(b.X)] = b.X
            Y[b.start : b.start + len(b.Y)] = b.Y
        return X, Y

    def map_blocks(self, fn, threads=1):
        """Apply ``fn`` to each block; results come back in block order."""
        return [fn(b) for b in self.blocks(threads)]

    def digest(self) -> str:
        h = hashlib.sha256()
        for b in self.blocks():
            h.update(np.ascontiguousarray(b.X, "<f8").tobytes())
            h.update(np.ascontiguousarray(b.Y, "<f8").tobytes())
        return h.hexdigest()


class ArrayObservations(ObservationSet):
    def __init__(self, X, Y, modes=None, block=BLOCK):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape != Y.shape:
            raise DimensionMismatch(f"x block {X.shape} and y block {Y.shape} differ")
        self.X, self.Y = X, Y
        self.modes = None if modes is None else np.asarray(modes, dtype=np.int32)
        self.N, self.n = X.shape
        self.block = block

    def blocks(self, threads=1):
        for s in range(0, self.N, self.block):
            e = min(s + self.block, self.N)
            yield Block(s, self.X[s:e], self.Y[s:e], None if self.modes is None else self.modes[s:e])

    def arrays(self):
        return self.X, self.Y


class GeneratedObservations(ObservationSet):
    """Lazily generated observations of a system under the uniform spherical law."""

    def __init__(self, sys: SwitchedSystem, N: int, seed: int, retain_modes=False, block=BLOCK):
        if N < 1:
            raise ValueError("N must be at least 1")
        self.sys, self.N, self.n = sys, int(N), sys.n
        self.seed, self.retain_modes, self.block = int(seed), retain_modes, block

    @property
    def n_blocks(self):
        return -(-self.N // self.block)

    def make_block(self, b: int) -> Block:
        start = b * self.block
        size = min(self.block, self.N - start)
        rng = block_rng(self.seed, b)
        X = sample_uniform_sphere(self.n, rng, size)
        q = rng.integers(0, self.sys.Q, size)
        Y = np.empty_like(X)
        for k, A in enumerate(self.sys.matrices):
            idx = q == k
            Y[idx] = X[idx] @ A.T
        return Block(start, X, Y, (q + 1).astype(np.int32) if self.retain_modes else None)

    def blocks(self, threads=1):
        if threads <= 1:
            for b in range(self.n_blocks):
                yield self.make_block(b)
            return
        with ThreadPoolExecutor(threads) as pool:
            # bounded look-ahead keeps memory flat
            for s in range(0, self.n_blocks, 4 * threads):
                yield from pool.map(self.make_block, range(s, min(s + 4 * threads, self.n_blocks)))

    def map_blocks(self, fn, threads=1):
        if threads <= 1:
            return [fn(self.make_block(b)) for b in range(self.n_blocks)]
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda b: fn(self.make_block(b)), range(self.n_blocks)))


def draw_observations(sys: SwitchedSystem, N: int, seed: int, retain_modes=False) -> GeneratedObservations:
    """``N`` i.i.d. pairs ``(x, A_q x)`` with ``x`` uniform on the sphere, ``q`` uniform."""
    return GeneratedObservations(sys, N, seed, retain_modes)


@dataclass
class StreamHeader:
    n: int
    N: int
    seed: int
    modes_retained: bool
    version: int = VERSION

    def pack(self) -> bytes:
        raw = HEADER.pack(MAGIC, self.version, self.n, self.N, self.seed, FLAG_MODES if self.modes_retained else 0)
        return raw.ljust(HEADER_SIZE, b"\0")

    @classmethod
    def unpack(cls, raw: bytes) -> "StreamHeader":
        if len(raw) < HEADER_SIZE:
            raise IoFailure("truncated header")
        magic, version, n, N, seed, flags = HEADER.unpack(raw[: HEADER.size])
        if magic != MAGIC:
            raise IoFailure(f"bad magic {magic!r}")
        if version != VERSION:
            raise IoFailure(f"unsupported stream version {version}")
        if n < 1 or N < 1:
            raise IoFailure("header declares an empty stream")
        return cls(n, N, seed, bool(flags & FLAG_MODES), version)


class StreamFile(ObservationSet):
    """Memory-mapped binary observation stream."""

    def __init__(self, path, block=BLOCK):
        self.path = Path(path)
        try:
            with open(self.path, "rb") as fh:
                self.header = StreamHeader.unpack(fh.read(HEADER_SIZE))
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self.n, self.N, self.block = self.header.n, self.header.N, block
        expected = HEADER_SIZE + self.N * 2 * self.n * 8 + (4 * self.N if self.header.modes_retained else 0)
        if self.path.stat().st_size != expected:
            raise IoFailure(f"{self.path}: size {self.path.stat().st_size}, expected {expected}")
        self._rec = np.memmap(self.path, dtype="<f8", mode="r", offset=HEADER_SIZE, shape=(self.N, 2 * self.n))
        self._modes = None
        if self.header.modes_retained:
            off = HEADER_SIZE + self.N * 2 * self.n * 8
            self._modes = np.memmap(self.path, dtype="<i4", mode="r", offset=off, shape=(self.N,))

    def blocks(self, threads=1):
        for s in range(0, self.N, self.block):
            e = min(s + self.block, self.N)
            rec = np.asarray(self._rec[s:e], dtype=float)
            m = None if self._modes is None else np.asarray(self._modes[s:e], dtype=np.int32)
            yield Block(s, rec[:, : self.n], rec[:, self.n :], m)


def write_stream(obs: ObservationSet, path, seed=0) -> StreamHeader:
    """Write header, records ``x || y`` (little-endian float64), then optional int32 modes."""
    first = next(iter(obs.blocks()))
    keep = first.modes is not None
    header = StreamHeader(obs.n, obs.N, int(seed), keep)
    modes = []
    try:
        with open(path, "wb") as fh:
            fh.write(header.pack())
            for b in obs.blocks():
                fh.write(np.ascontiguousarray(np.hstack([b.X, b.Y]), "<f8").tobytes())
                if keep:
                    modes.append(np.asarray(b.modes, "<i4"))
            for m in modes:
                fh.write(m.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return header


def read_stream(path) -> StreamFile:
    return StreamFile(path)


def export_csv(obs: ObservationSet, path):
    n = obs.n
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{j}" for j in range(1, n + 1)] + [f"y_{j}" for j in range(1, n + 1)])
            for b in obs.blocks():
                for x, y in zip(b.X, b.Y):
                    w.writerow([f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in y])
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def import_csv(path, normalize_tol=1e-12):
    """Read ``x_1..x_n,y_1..y_n`` rows.

    Returns ``(observations, normalized)``. Rows whose ``x`` is off the unit
    sphere are rescaled, ``y`` by the same factor, which leaves every
    homogeneous constraint unchanged; ``normalized`` reports whether any were.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    head, body = rows[0], rows[1:]
    n = len(head) // 2
    if len(head) != 2 * n or head[:n] != [f"x_{j}" for j in range(1, n + 1)]:
        raise IoFailure(f"{path}: expected columns x_1..x_n,y_1..y_n")
    data = np.array(body, dtype=float).reshape(-1, 2 * n)
    X, Y = data[:, :n], data[:, n:]
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError("observation with x = 0")
    normalized = bool(np.any(np.abs(norms - 1) > normalize_tol))
    if normalized:
        X, Y = X / norms[:, None], Y / norms[:, None]
    return ArrayObservations(X, Y), normalized


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    M: int


def _binomial(k, M) -> Estimate:
    p = k / M
    return Estimate(p, float(np.sqrt(p * (1 - p) / M)), M)


def estimate_psi_probability(sys: SwitchedSystem, P, gamma, M, seed, threads=1) -> Estimate:
    """Fraction of fresh samples with ``y' P y <= gamma^2 x' P x``, with binomial standard error."""
    P = np.asarray(P, dtype=float)
    g2 = float(gamma) ** 2
    obs = GeneratedObservations(sys, M, seed)

    def count(b):
        num = np.einsum("ij,jk,ik->i", b.Y, P, b.Y)
        den = g2 * np.einsum("ij,jk,ik->i", b.X, P, b.X)
        slack = 1e-12 * (np.abs(num) + np.abs(den))
        return int(np.count_nonzero(num <= den + slack))

    return _binomial(sum(obs.map_blocks(count, threads)), M)


@dataclass(frozen=True)
class Cap:
    """Spherical cap ``{x on the sphere : <x, center> >= height}``."""

    center: np.ndarray
    height: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", c / np.linalg.norm(c))

    @property
    def n(self):
        return len(self.center)

    def contains(self, X):
        return X @ self.center >= self.height


def cap_measure(n: int, height: float) -> float:
    """Exact normalised measure of a cap of the given height on the sphere in R^n."""
    h = float(np.clip(height, -1.0, 1.0))
    if n == 1:
        return float((1.0 >= h) + (-1.0 >= h)) / 2
    half = 0.5 * special.betainc((n - 1) / 2, 0.5, 1 - h * h)
    return half if h >= 0 else 1 - half


def slice_cap_measure(cap: Cap, s: float) -> float:
    """Measure of the slice ``{x' : [s, sqrt(1-s^2) x'] in cap}`` on the sphere in R^(n-1)."""
    c1, rest = cap.center[0], cap.center[1:]
    r = np.linalg.norm(rest)
    lhs = cap.height - s * c1
    root = np.sqrt(max(1 - s * s, 0.0))
    if r == 0 or root == 0:
        return float(lhs <= 0)
    return cap_measure(len(rest), lhs / (root * r))


def slice_integral(cap: Cap) -> float:
    """Quadrature side of the slice-measure identity for a cap."""
    n = cap.n
    B = special.beta((n - 1) / 2, 0.5)
    f = lambda s: (1 - s * s) ** ((n - 3) / 2) * slice_cap_measure(cap, s)
    # the slice measure has kinks where the slice becomes empty or full
    c1, r = cap.center[0], np.linalg.norm(cap.center[1:])
    pts = [s for s in np.roots([c1 * c1 + r * r, -2 * cap.height * c1, cap.height**2 - r * r]).real if -1 < s < 1]
    val, _ = integrate.quad(f, -1, 1, points=pts or None, limit=200, epsabs=1e-12)
    return val / B


def estimate_cap_measure(cap: Cap, M: int, seed: int) -> Estimate:
    rng = np.random.default_rng(seed)
    hits = 0
    for s in range(0, M, BLOCK):
        X = sample_uniform_sphere(cap.n, rng, min(BLOCK, M - s))
        hits += int(np.count_nonzero(cap.contains(X)))
    return _binomial(hits, M)


@dataclass(frozen=True)
class CapDistortion:
    source: Estimate  # mu(S)
    image: Estimate  # mu({Ax/|Ax| : x in S})
    factor: float  # prod(sigma_j)^(1/n) / sigma_n

    @property
    def slack(self) -> float:
        """``factor*mu(S) - mu(AS)`` in units of the combined standard error."""
        se = np.hypot(self.factor * self.source.stderr, self.image.stderr)
        diff = self.factor * self.source.value - self.image.value
        return float(diff / se) if se > 0 else float(np.inf if diff >= 0 else -np.inf)


def distortion_factor(A) -> float:
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return float(np.exp(np.mean(np.log(s))) / s[-1])


def estimate_cap_distortion(A, cap: Cap, M: int, seed: int) -> CapDistortion:
    """Monte-Carlo ``mu(S)`` and ``mu(AS)`` for a cap ``S`` and invertible ``A``.

    ``z`` lies in ``AS`` exactly when ``A^-1 z / |A^-1 z|`` lies in ``S``, so both
    measures come from uniform draws (independent streams for the two sides).
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (cap.n, cap.n):
        raise DimensionMismatch(f"map is {A.shape}, cap lives in R^{cap.n}")
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-12:
        raise SingularMatrix(f"smallest singular value {s[-1]:.3e}")
    Ainv = np.linalg.inv(A)
    src = estimate_cap_measure(cap, M, seed)
    rng = np.random.default_rng([seed, 1])
    hits = 0
    for k in range(0, M, BLOCK):
        Z = sample_uniform_sphere(cap.n, rng, min(BLOCK, M - k))
        W = Z @ Ainv.T
        hits += int(np.count_nonzero(cap.contains(W / np.linalg.norm(W, axis=1, keepdims=True))))
    return CapDistortion(src, _binomial(hits, M), distortion_factor(A))
