"""Dataset generation, chunked streaming, shuffling, and reservoir sampling.

Datasets are flat float64 observation matrices plus a small header
(model id, generator seed, true parameters, phase boundaries).  The binary
file format is a magic/version/JSON-header prefix followed by raw
little-endian float64 records, so million-row files stream cheaply; a
line-delimited text export exists for inspection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import UsageError

MAGIC = b"MLEV"
FORMAT_VERSION = 1

# Shift dataset geometry: component means on a coarse grid with unit
# variances and spacing 3; two pairs sit at spacing 1.5 so some clusters
# overlap.  Phase p draws from the first SHIFT_PHASE_COMPONENTS[p] rows.
SHIFT_MEANS = np.array(
    [
        [0.0, 0.0],
        [3.0, 0.0],
        [0.0, 3.0],
        [3.0, 3.0],
        [4.5, 0.0],  # overlaps the (3, 0) cluster
        [-3.0, 0.0],
        [0.0, 4.5],  # overlaps the (0, 3) cluster
    ]
)
SHIFT_PHASE_COMPONENTS = (3, 5, 7)
DEFAULT_PHASE_SIZES = (1000, 9000, 90000)


@dataclass
class Dataset:
    """Observation matrix plus provenance header."""

    model_id: str
    observations: np.ndarray
    seed: int | None = None
    true_params: np.ndarray | None = None
    phase_bounds: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if self.true_params is not None:
            self.true_params = np.asarray(self.true_params, dtype=float)
        self.phase_bounds = tuple(int(b) for b in self.phase_bounds)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def arity(self) -> int:
        return self.observations.shape[1]

    def head(self, n: int) -> "Dataset":
        """First n observations with the same header."""
        return Dataset(
            self.model_id,
            self.observations[:n],
            seed=self.seed,
            true_params=self.true_params,
            phase_bounds=tuple(b for b in self.phase_bounds if b <= n),
            meta=dict(self.meta),
        )


def chunk_iter(observations: np.ndarray, chunk_size: int):
    """Yield ordered, non-overlapping, exhaustive chunks (last may be short)."""
    if chunk_size < 1:
        raise UsageError("chunk_size must be >= 1")
    observations = np.atleast_2d(observations)
    for start in range(0, len(observations), chunk_size):
        yield observations[start : start + chunk_size]


class DataStream:
    """Single-consumer chunked view over an observation matrix."""

    def __init__(self, observations: np.ndarray, chunk_size: int):
        if chunk_size < 1:
            raise UsageError("chunk_size must be >= 1")
        self.observations = np.atleast_2d(np.asarray(observations, dtype=float))
        self.chunk_size = chunk_size

    @property
    def n(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return chunk_iter(self.observations, self.chunk_size)


class FullHistory:
    """Uniform i.i.d. (with replacement) mini-batches over everything seen.

    Backed by a doubling buffer so appends stay amortised O(1); suitable
    when the history fits in memory.
    """

    def __init__(self, arity: int):
        self._buf = np.empty((256, arity))
        self.n_seen = 0

    def add(self, obs: np.ndarray, rng: np.random.Generator | None = None):
        obs = np.atleast_2d(obs)
        need = self.n_seen + len(obs)
        if need > len(self._buf):
            cap = len(self._buf)
            while cap < need:
                cap *= 2
            grown = np.empty((cap, self._buf.shape[1]))
            grown[: self.n_seen] = self._buf[: self.n_seen]
            self._buf = grown
        self._buf[self.n_seen : need] = obs
        self.n_seen = need

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.n_seen == 0:
            raise UsageError("cannot sample from an empty history")
        idx = rng.integers(0, self.n_seen, size=size)
        return self._buf[idx]


class Reservoir:
    """Single-pass uniform subsample of a stream (algorithm R).

    After n offers every offered item is present with probability
    capacity/n; mini-batches are drawn uniformly with replacement from the
    reservoir, standing in for the full history when it cannot be stored.
    """

    def __init__(self, capacity: int, arity: int):
        if capacity < 1:
            raise UsageError("capacity must be >= 1")
        self.capacity = capacity
        self.items = np.empty((capacity, arity))
        self.n_seen = 0

    def __len__(self):
        return min(self.n_seen, self.capacity)

    def offer(self, obs: np.ndarray, rng: np.random.Generator):
        """Offer one observation; it displaces a uniform slot w.p. R/seen."""
        self.n_seen += 1
        if self.n_seen <= self.capacity:
            self.items[self.n_seen - 1] = obs
        else:
            j = rng.integers(0, self.n_seen)
            if j < self.capacity:
                self.items[j] = obs

    def add(self, obs: np.ndarray, rng: np.random.Generator):
        for row in np.atleast_2d(obs):
            self.offer(row, rng)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.n_seen == 0:
            raise UsageError("cannot sample from an empty reservoir")
        idx = rng.integers(0, len(self), size=size)
        return self.items[idx]


def reservoir_offer(reservoir: Reservoir, obs: np.ndarray, rng: np.random.Generator) -> Reservoir:
    """Functional spelling of :meth:`Reservoir.offer`."""
    reservoir.offer(obs, rng)
    return reservoir


def shuffle_dataset(ds: Dataset, rng: np.random.Generator) -> Dataset:
    """Uniform permutation of the observations; header is kept, phase bounds dropped."""
    perm = rng.permutation(ds.n)
    return Dataset(
        ds.model_id,
        ds.observations[perm],
        seed=ds.seed,
        true_params=ds.true_params,
        phase_bounds=(),
        meta={**ds.meta, "shuffled": True},
    )


def generate_shift_dataset(
    seed: int, phase_sizes: tuple[int, int, int] = DEFAULT_PHASE_SIZES
) -> Dataset:
    """Non-stationary 2-D dataset in three phases.

    Phase p draws from an equal-weight mixture of the first (3, 5, 7)[p]
    unit-variance components of :data:`SHIFT_MEANS`; every later phase
    includes all earlier components.  Phase boundaries land at the
    cumulative phase sizes.
    """
    if len(phase_sizes) != len(SHIFT_PHASE_COMPONENTS):
        raise UsageError("expected one size per phase")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0,)))
    blocks = []
    for size, k in zip(phase_sizes, SHIFT_PHASE_COMPONENTS):
        comp = rng.integers(0, k, size=size)
        blocks.append(SHIFT_MEANS[comp] + rng.standard_normal((size, 2)))
    bounds = tuple(np.cumsum(phase_sizes)[:-1].tolist())
    return Dataset(
        "gmm",
        np.concatenate(blocks, axis=0),
        seed=seed,
        true_params=None,
        phase_bounds=bounds,
        meta={
            "generator": "shift",
            "phase_sizes": list(phase_sizes),
            "phase_components": list(SHIFT_PHASE_COMPONENTS),
            "component_means": SHIFT_MEANS.tolist(),
        },
    )


def _header_dict(ds: Dataset) -> dict:
    return {
        "model": ds.model_id,
        "obs_arity": ds.arity,
        "n": ds.n,
        "seed": ds.seed,
        "true_params": None if ds.true_params is None else ds.true_params.tolist(),
        "phase_bounds": list(ds.phase_bounds),
        "meta": ds.meta,
    }


def write_dataset(path, ds: Dataset) -> None:
    """Write the binary dataset file (magic, version, JSON header, float64 LE)."""
    header = json.dumps(_header_dict(ds), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        fh.write(np.ascontiguousarray(ds.observations, dtype="<f8").tobytes())


def read_dataset(path) -> Dataset:
    """Read a file written by :func:`write_dataset`."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise UsageError(f"{path}: not a dataset file")
        version = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        if version != FORMAT_VERSION:
            raise UsageError(f"{path}: unsupported format version {version}")
        hlen = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        header = json.loads(fh.read(hlen).decode("utf-8"))
        obs = np.frombuffer(fh.read(), dtype="<f8").reshape(
            header["n"], header["obs_arity"]
        )
    return Dataset(
        header["model"],
        obs.copy(),
        seed=header["seed"],
        true_params=None if header["true_params"] is None else np.array(header["true_params"]),
        phase_bounds=tuple(header["phase_bounds"]),
        meta=header.get("meta", {}),
    )


def write_dataset_text(path, ds: Dataset) -> None:
    """Line-delimited text twin of the binary format, for inspection."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in sorted(_header_dict(ds).items()):
            fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        for row in ds.observations:
            fh.write(" ".join(repr(v) for v in row) + "\n")
