"""
Complex Kernels Module.

Width-2 complex double-precision arithmetic on interleaved batches.

A pair of complex values is stored as four float64 lanes
[re0, im0, re1, im1]; a batch of k pairs is a (k, 4) array. The vector
product follows the shuffle / multiply / add-subtract dataflow of a 256-bit
register implementation:

    b_swap = [b0i, b0r, b1i, b1r]
    t      = [a0i, a0i, a1i, a1i] * b_swap
    out    = [a0r, a0r, a1r, a1r] * b  (-, +, -, +)  t

Backends:
- SCALAR: pure-Python loop over complex numbers (reference)
- VECTOR: numpy lanes, separately rounded multiply and add
- FUSED: numpy lanes with the final step as a fused multiply-add (needs pyfma)
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

from .errors import DimensionError

_SWAP = np.array([1, 0, 3, 2])
_RE_DUP = np.array([0, 0, 2, 2])
_IM_DUP = np.array([1, 1, 3, 3])
_ADDSUB = np.array([-1.0, 1.0, -1.0, 1.0])


class KernelBackend(Enum):
    """Arithmetic path used by the kernels."""
    SCALAR = "scalar"
    VECTOR = "vector"
    FUSED = "fused"


def pack_pairs(values: Sequence[complex] | np.ndarray) -> np.ndarray:
    """
    Convert a complex vector into a (k, 4) interleaved batch.

    Odd lengths are padded with a zero lane.
    """
    values = np.asarray(values, dtype=np.complex128).ravel()
    if values.size % 2:
        values = np.append(values, 0j)
    return values.view(np.float64).reshape(-1, 4).copy()


def unpack_pairs(pairs: np.ndarray, length: Optional[int] = None) -> np.ndarray:
    """Inverse of pack_pairs; `length` drops the padding lane."""
    pairs = np.ascontiguousarray(pairs, dtype=np.float64)
    if pairs.shape[-1] != 4:
        raise DimensionError(f"expected pairs shaped (k, 4), got {pairs.shape}")
    values = pairs.reshape(-1).view(np.complex128)
    return values.copy() if length is None else values[:length].copy()


def _check_pairs(*arrays: np.ndarray) -> None:
    shape = arrays[0].shape
    if shape[-1:] != (4,):
        raise DimensionError(f"expected pairs shaped (k, 4), got {shape}")
    for arr in arrays[1:]:
        if arr.shape != shape:
            raise DimensionError(f"pair batches differ in shape: {shape} vs {arr.shape}")


def _fma(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    try:
        import pyfma
    except ImportError as e:
        raise ImportError(
            "The fused kernel backend needs pyfma. Install with: pip install hybrid-se[fma]"
        ) from e
    return pyfma.fma(a, b, c)


def cmul2(
    a: np.ndarray,
    b: np.ndarray,
    backend: KernelBackend = KernelBackend.VECTOR,
) -> np.ndarray:
    """
    Lanewise complex product of two pair batches.

    Args:
        a: (k, 4) or (4,) interleaved pairs.
        b: Same shape as `a`.
        backend: Arithmetic path.

    Returns:
        New batch of the same shape with lane k = a_k * b_k.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pairs(a, b)

    if backend is KernelBackend.SCALAR:
        out = cmul_scalar(unpack_pairs(a), unpack_pairs(b))
        return pack_pairs(out).reshape(a.shape)

    t = a[..., _IM_DUP] * b[..., _SWAP]
    if backend is KernelBackend.FUSED:
        return _fma(a[..., _RE_DUP], b, _ADDSUB * t)
    return a[..., _RE_DUP] * b + _ADDSUB * t


def cfma2(
    a: np.ndarray,
    b: np.ndarray,
    acc: np.ndarray,
    backend: KernelBackend = KernelBackend.VECTOR,
) -> np.ndarray:
    """acc + a*b lanewise; same rounding contract as cmul2."""
    acc = np.asarray(acc, dtype=np.float64)
    product = cmul2(a, b, backend)
    _check_pairs(product, acc)
    return acc + product


def cdot(
    a: Sequence[complex] | np.ndarray,
    b: Sequence[complex] | np.ndarray,
    conjugate_a: bool = False,
    backend: KernelBackend = KernelBackend.VECTOR,
) -> complex:
    """
    Complex dot product Σ a_i b_i (or Σ ā_i b_i).

    Accumulation order is fixed: the even-length prefix is multiplied two at
    a time and summed per lane, the odd tail element is added to lane 0, and
    the two lanes are reduced last.

    Raises:
        DimensionError: if the lengths differ.
    """
    a = np.asarray(a, dtype=np.complex128).ravel()
    b = np.asarray(b, dtype=np.complex128).ravel()
    if a.size != b.size:
        raise DimensionError(f"cdot length mismatch: {a.size} vs {b.size}")
    if conjugate_a:
        a = np.conj(a)

    if backend is KernelBackend.SCALAR:
        total = 0j
        for x, y in zip(a.tolist(), b.tolist()):
            total += x * y
        return total

    even = a.size - a.size % 2
    lanes = np.zeros(4, dtype=np.float64)
    if even:
        lanes = cmul2(pack_pairs(a[:even]), pack_pairs(b[:even]), backend).sum(axis=0)
    if even != a.size:
        tail = complex(a[-1]) * complex(b[-1])
        lanes[0] += tail.real
        lanes[1] += tail.imag
    return complex(lanes[0] + lanes[2], lanes[1] + lanes[3])


def cmul_reference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product by the textbook formula on separate re/im arrays."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    re = a.real * b.real - a.imag * b.imag
    im = a.real * b.imag + a.imag * b.real
    return re + 1j * im


def cmul_scalar(a: Sequence[complex], b: Sequence[complex]) -> np.ndarray:
    """Elementwise product one complex number at a time."""
    out = [
        complex(x.real * y.real - x.imag * y.imag, x.real * y.imag + x.imag * y.real)
        for x, y in zip(np.asarray(a).tolist(), np.asarray(b).tolist())
    ]
    return np.array(out, dtype=np.complex128)


@dataclass
class KernelBenchmark:
    """Throughput of the kernel paths, in complex multiplies per second."""

    size: int
    repeats: int
    scalar_per_sec: float
    vector_per_sec: float
    fused_per_sec: Optional[float] = None

    @property
    def speedup(self) -> float:
        return self.vector_per_sec / self.scalar_per_sec if self.scalar_per_sec else float("nan")

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["speedup"] = self.speedup
        return data


def _throughput(fn, size: int, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return size / best if best > 0 else float("inf")


def kernel_benchmark(size: int = 100_000, repeats: int = 5, seed: int = 0) -> KernelBenchmark:
    """
    Time scalar versus vectorized complex multiplication.

    Args:
        size: Number of complex products per run (rounded up to even).
        repeats: Runs per path; the best time is kept.
        seed: RNG seed for the operands.
    """
    if size < 1 or repeats < 1:
        raise ValueError("size and repeats must be positive")
    size += size % 2
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    b = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    pa, pb = pack_pairs(a), pack_pairs(b)
    a_list, b_list = a.tolist(), b.tolist()

    scalar = _throughput(lambda: cmul_scalar(a_list, b_list), size, repeats)
    vector = _throughput(lambda: cmul2(pa, pb), size, repeats)
    try:
        fused: Optional[float] = _throughput(
            lambda: cmul2(pa, pb, KernelBackend.FUSED), size, repeats
        )
    except ImportError:
        fused = None
    return KernelBenchmark(size, repeats, scalar, vector, fused)
