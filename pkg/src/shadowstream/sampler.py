"""Randomized local Pauli measurements and the classical records they produce.

Each shot measures every qubit in a uniformly random Pauli basis (X, Y
or Z) and keeps only the basis choice and the observed bit, three bits
of classical information per qubit.  The single-qubit inverse-channel
factor associated with outcome ``b`` in basis ``P`` is

    f = I/2 + (3/2) * (-1)**b * P,

and the tensor product of these factors across qubits is an unbiased
(if wildly unphysical) estimate of the measured state.

Randomness is counter-based: shot ``i`` of a stream seeds a Philox
generator with ``(seed, i)``, so any shot can be regenerated in
isolation and generation order (or thread count) cannot change the
record.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidStateError
from .states import DensityMatrix

__all__ = [
    "AXIS_X",
    "AXIS_Y",
    "AXIS_Z",
    "AXIS_CHARS",
    "Snapshot",
    "ShadowRecord",
    "inverse_channel_factor",
    "snapshot_matrix",
    "shot_rng",
    "sample_snapshot",
    "iter_snapshots",
    "stream_shadows",
    "BornSampler",
]

AXIS_X, AXIS_Y, AXIS_Z = 0, 1, 2
AXIS_CHARS = "XYZ"

_PAULIS = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=np.complex128,
)

_HADAMARD = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2.0)

# Rotation U_a maps the P_a eigenbasis to the computational basis, so
# diag(U rho U^dag) gives the Born probabilities of the basis outcomes.
# For Y this is "S^dag then H", sending |+y> to |0> and |-y> to |1>.
_ROTATIONS = np.stack(
    [
        _HADAMARD,
        _HADAMARD @ np.diag([1.0, -1.0j]),
        np.eye(2, dtype=np.complex128),
    ]
)

# FACTORS[a, b] = I/2 + (3/2) (-1)^b P_a, indexed by axis then outcome bit.
FACTORS = np.empty((3, 2, 2, 2), dtype=np.complex128)
for _a in range(3):
    for _b in range(2):
        FACTORS[_a, _b] = 0.5 * np.eye(2) + 1.5 * (-1.0) ** _b * _PAULIS[_a]
FACTORS.setflags(write=False)


def inverse_channel_factor(axis: int, bit: int) -> np.ndarray:
    """The 2x2 snapshot factor for one qubit's basis choice and outcome."""
    if not (0 <= axis < 3 and 0 <= bit < 2):
        raise ValueError(f"axis must be 0..2 and bit 0..1, got ({axis}, {bit})")
    return FACTORS[axis, bit]


def _coerce_fields(values, what: str, upper: int) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind == "U" and what == "axes":
        arr = np.array([AXIS_CHARS.index(c) for c in "".join(arr.tolist())])
    arr = arr.astype(np.uint8)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if arr.size and int(arr.max(initial=0)) >= upper:
        raise ValueError(f"{what} entries must be < {upper}")
    return arr


class Snapshot:
    """One shot's classical data: a basis axis and an outcome bit per qubit.

    Axes may be given as integer codes or as a string like ``"XZY"``.
    Instances are immutable.
    """

    __slots__ = ("axes", "bits")

    def __init__(self, axes, bits):
        axes = _coerce_fields(axes, "axes", 3)
        bits = _coerce_fields(bits, "bits", 2)
        if axes.shape != bits.shape:
            raise ValueError(f"axes and bits differ in length: {axes.shape} vs {bits.shape}")
        if axes.size == 0:
            raise ValueError("a snapshot needs at least one qubit")
        axes.setflags(write=False)
        bits.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "bits", bits)

    def __setattr__(self, name, value):
        raise AttributeError("Snapshot is immutable")

    @property
    def n_qubits(self) -> int:
        return self.axes.size

    def axis_string(self) -> str:
        return "".join(AXIS_CHARS[a] for a in self.axes)

    def bit_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Snapshot):
            return NotImplemented
        return np.array_equal(self.axes, other.axes) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((self.axes.tobytes(), self.bits.tobytes()))

    def __repr__(self) -> str:
        return f"Snapshot({self.axis_string()!r}, {self.bit_string()!r})"


def snapshot_matrix(snapshot: Snapshot) -> np.ndarray:
    """Dense reconstruction of a snapshot: the Kronecker product of its factors.

    The result is Hermitian with unit trace but far from positive; only
    averages of many snapshots approach a physical state.
    """
    out = FACTORS[snapshot.axes[0], snapshot.bits[0]]
    for a, b in zip(snapshot.axes[1:], snapshot.bits[1:]):
        out = np.kron(out, FACTORS[a, b])
    return out


def shot_rng(seed: int, index: int) -> np.random.Generator:
    """The generator for shot ``index`` of the stream with the given seed.

    Distinct indices get disjoint Philox counter blocks, so shots can be
    generated in any order, in parallel, or re-generated individually.
    """
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 bits, got {seed}")
    if index < 0:
        raise ValueError(f"shot index must be nonnegative, got {index}")
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, index, 0]))


class BornSampler:
    """Samples snapshots from a fixed state, caching per-basis distributions.

    For each distinct axis combination the diagonal of ``U rho U^dag``
    is computed once (via successive single-qubit rotations) and the
    cumulative distribution reused; the cache is skipped above 8 qubits
    where 3**N tables could dominate memory.
    """

    def __init__(self, rho: DensityMatrix, check_physical: bool = True):
        if check_physical:
            rho.assert_physical()
        self._entries = rho.entries
        self._n = rho.n_qubits
        self._shifts = np.arange(self._n - 1, -1, -1, dtype=np.uint64)
        self._cache: dict[bytes, np.ndarray] | None = {} if self._n <= 8 else None

    @property
    def n_qubits(self) -> int:
        return self._n

    def probabilities(self, axes) -> np.ndarray:
        """Born probabilities of all 2**N outcomes for one axis combination."""
        axes = _coerce_fields(axes, "axes", 3)
        if axes.size != self._n:
            raise ValueError(f"expected {self._n} axes, got {axes.size}")
        return self._cdf(axes.tobytes(), axes)[0]

    def _cdf(self, key: bytes, axes: np.ndarray):
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        n, dim = self._n, 1 << self._n
        t = self._entries.reshape((2,) * (2 * n))
        for q in range(n):
            u = _ROTATIONS[axes[q]]
            t = np.moveaxis(np.tensordot(u, t, axes=([1], [q])), 0, q)
        for q in range(n):
            u = _ROTATIONS[axes[q]].conj()
            t = np.moveaxis(np.tensordot(t, u, axes=([n + q], [1])), -1, n + q)
        probs = np.real(np.diagonal(t.reshape(dim, dim))).copy()
        np.clip(probs, 0.0, None, out=probs)
        probs /= probs.sum()
        entry = (probs, np.cumsum(probs))
        if self._cache is not None:
            self._cache[key] = entry
        return entry

    def sample(self, rng: np.random.Generator) -> Snapshot:
        """Draw one snapshot: uniform axes, then Born-distributed outcome bits."""
        axes = rng.integers(0, 3, size=self._n, dtype=np.uint8)
        _, cdf = self._cdf(axes.tobytes(), axes)
        u = rng.random()
        index = min(int(np.searchsorted(cdf, u, side="right")), cdf.size - 1)
        bits = ((index >> self._shifts) & 1).astype(np.uint8)
        return Snapshot(axes, bits)


def sample_snapshot(rho: DensityMatrix, rng: np.random.Generator) -> Snapshot:
    """Draw a single snapshot from ``rho`` (validates the state each call)."""
    return BornSampler(rho).sample(rng)


def iter_snapshots(
    rho: DensityMatrix, count: int, seed: int, start: int = 0
) -> Iterator[Snapshot]:
    """Yield snapshots ``start .. start+count-1`` of the stream, one at a time."""
    sampler = BornSampler(rho)
    for i in range(start, start + count):
        yield sampler.sample(shot_rng(seed, i))


class ShadowRecord:
    """An ordered, append-only sequence of snapshots plus its provenance.

    Internally two ``(T, N)`` byte arrays (axis codes and outcome bits)
    with amortized growth, so a record costs two bytes per qubit-shot in
    memory and three bits per qubit-shot on disk.
    """

    _MAGIC = b"SSHR"
    _VERSION = 1
    _HEADER = struct.Struct("<4sHHQBQI")

    def __init__(self, n_qubits: int, seed: int | None = None, descriptor: str = ""):
        if n_qubits < 1:
            raise ValueError(f"need at least one qubit, got {n_qubits}")
        self._n = n_qubits
        self._len = 0
        self._axes = np.empty((16, n_qubits), dtype=np.uint8)
        self._bits = np.empty((16, n_qubits), dtype=np.uint8)
        self.seed = seed
        self.descriptor = descriptor

    @classmethod
    def from_arrays(
        cls, axes, bits, seed: int | None = None, descriptor: str = ""
    ) -> "ShadowRecord":
        axes = np.asarray(axes, dtype=np.uint8)
        bits = np.asarray(bits, dtype=np.uint8)
        if axes.ndim != 2 or axes.shape != bits.shape:
            raise ValueError("axes and bits must be matching (T, N) arrays")
        if axes.size and int(axes.max()) > 2:
            raise ValueError("axis codes must be 0, 1 or 2")
        if bits.size and int(bits.max()) > 1:
            raise ValueError("outcome bits must be 0 or 1")
        rec = cls(axes.shape[1], seed=seed, descriptor=descriptor)
        rec._axes = axes.copy()
        rec._bits = bits.copy()
        rec._len = axes.shape[0]
        return rec

    @classmethod
    def from_snapshots(
        cls, snapshots: Sequence[Snapshot], seed: int | None = None, descriptor: str = ""
    ) -> "ShadowRecord":
        snapshots = list(snapshots)
        if not snapshots:
            raise ValueError("cannot infer the qubit count of an empty record")
        rec = cls(snapshots[0].n_qubits, seed=seed, descriptor=descriptor)
        for s in snapshots:
            rec.append(s)
        return rec

    @property
    def n_qubits(self) -> int:
        return self._n

    @property
    def axes(self) -> np.ndarray:
        """Axis codes, shape ``(len(self), n_qubits)`` (read-only view)."""
        view = self._axes[: self._len]
        view.setflags(write=False)
        return view

    @property
    def bits(self) -> np.ndarray:
        """Outcome bits, shape ``(len(self), n_qubits)`` (read-only view)."""
        view = self._bits[: self._len]
        view.setflags(write=False)
        return view

    def append(self, snapshot: Snapshot) -> None:
        if snapshot.n_qubits != self._n:
            raise ValueError(
                f"snapshot has {snapshot.n_qubits} qubits, record has {self._n}"
            )
        if self._len == self._axes.shape[0]:
            capacity = max(16, 2 * self._axes.shape[0])
            for name in ("_axes", "_bits"):
                grown = np.empty((capacity, self._n), dtype=np.uint8)
                grown[: self._len] = getattr(self, name)[: self._len]
                setattr(self, name, grown)
        self._axes[self._len] = snapshot.axes
        self._bits[self._len] = snapshot.bits
        self._len += 1

    def extend(self, snapshots) -> None:
        for s in snapshots:
            self.append(s)

    def __len__(self) -> int:
        return self._len

    def __getitem__(self, key):
        if isinstance(key, slice):
            return ShadowRecord.from_arrays(
                self.axes[key], self.bits[key], seed=self.seed, descriptor=self.descriptor
            )
        index = int(key)
        if index < 0:
            index += self._len
        if not 0 <= index < self._len:
            raise IndexError(f"shot {key} out of range for record of length {self._len}")
        return Snapshot(self._axes[index], self._bits[index])

    def __iter__(self) -> Iterator[Snapshot]:
        for i in range(self._len):
            yield Snapshot(self._axes[i], self._bits[i])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ShadowRecord):
            return NotImplemented
        return (
            self._n == other._n
            and self.seed == other.seed
            and self.descriptor == other.descriptor
            and np.array_equal(self.axes, other.axes)
            and np.array_equal(self.bits, other.bits)
        )

    def __repr__(self) -> str:
        return (
            f"ShadowRecord(n_qubits={self._n}, shots={self._len}, "
            f"seed={self.seed}, descriptor={self.descriptor!r})"
        )

    # -- serialization ---------------------------------------------------

    def to_bytes(self) -> bytes:
        """The packed binary form: header plus 3 bits per qubit-shot."""
        stream = np.empty((self._len, self._n, 3), dtype=np.uint8)
        stream[..., 0] = self.axes >> 1
        stream[..., 1] = self.axes & 1
        stream[..., 2] = self.bits
        payload = np.packbits(stream.reshape(-1)).tobytes()
        desc = self.descriptor.encode("utf-8")
        header = self._HEADER.pack(
            self._MAGIC,
            self._VERSION,
            self._n,
            self._len,
            1 if self.seed is not None else 0,
            self.seed if self.seed is not None else 0,
            len(desc),
        )
        return header + desc + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ShadowRecord":
        if len(blob) < cls._HEADER.size:
            raise ValueError("buffer is too short to be a shadow record")
        magic, version, n, count, flags, seed, desc_len = cls._HEADER.unpack_from(blob)
        if magic != cls._MAGIC:
            raise ValueError(f"not a shadow record (bad magic {magic!r})")
        if version != cls._VERSION:
            raise ValueError(f"unsupported shadow record version {version}")
        offset = cls._HEADER.size
        descriptor = blob[offset : offset + desc_len].decode("utf-8")
        offset += desc_len
        raw = np.unpackbits(
            np.frombuffer(blob, dtype=np.uint8, offset=offset), count=count * n * 3
        ).reshape(count, n, 3)
        axes = ((raw[..., 0] << 1) | raw[..., 1]).astype(np.uint8)
        if axes.size and int(axes.max()) > 2:
            raise ValueError("record contains invalid axis codes")
        return cls.from_arrays(
            axes, raw[..., 2], seed=seed if flags & 1 else None, descriptor=descriptor
        )

    def save(self, path) -> None:
        """Write :meth:`to_bytes` to a file."""
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ShadowRecord":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_json(self) -> str:
        """Human-readable form; round-trips exactly via :meth:`from_json`."""
        shots = [
            {"axes": s.axis_string(), "bits": s.bit_string()} for s in self
        ]
        return json.dumps(
            {
                "format": "shadow-record",
                "version": self._VERSION,
                "n_qubits": self._n,
                "count": self._len,
                "seed": self.seed,
                "descriptor": self.descriptor,
                "shots": shots,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ShadowRecord":
        payload = json.loads(text)
        if payload.get("format") != "shadow-record":
            raise ValueError("not a shadow-record JSON document")
        n = int(payload["n_qubits"])
        count = int(payload["count"])
        axes = np.empty((count, n), dtype=np.uint8)
        bits = np.empty((count, n), dtype=np.uint8)
        for i, shot in enumerate(payload["shots"]):
            axes[i] = [AXIS_CHARS.index(c) for c in shot["axes"]]
            bits[i] = [int(c) for c in shot["bits"]]
        return cls.from_arrays(
            axes, bits, seed=payload.get("seed"), descriptor=payload.get("descriptor", "")
        )


def stream_shadows(
    rho: DensityMatrix,
    count: int,
    seed: int,
    descriptor: str | None = None,
    workers: int = 1,
) -> ShadowRecord:
    """Generate ``count`` snapshots and assemble them in shot order.

    The record is a pure function of ``(rho, count, seed)``; ``workers``
    only splits the index range across threads and cannot change it.
    """
    if count < 0:
        raise ValueError(f"shot count must be nonnegative, got {count}")
    sampler = BornSampler(rho)
    n = rho.n_qubits
    axes = np.empty((count, n), dtype=np.uint8)
    bits = np.empty((count, n), dtype=np.uint8)

    def fill(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            snap = sampler.sample(shot_rng(seed, i))
            axes[i] = snap.axes
            bits[i] = snap.bits

    if workers <= 1 or count < 2:
        fill(0, count)
    else:
        step = -(-count // workers)
        bounds = [(lo, min(lo + step, count)) for lo in range(0, count, step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for future in [pool.submit(fill, lo, hi) for lo, hi in bounds]:
                future.result()
    return ShadowRecord.from_arrays(
        axes,
        bits,
        seed=seed,
        descriptor=descriptor if descriptor is not None else f"{n}-qubit state",
    )
