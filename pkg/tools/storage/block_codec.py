import os
import sys
import struct

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from models.txrx import RxBlock, dft_block
from tools.logger import AppLogger


class BlockCodecError(Exception):
    """Custom exception class for malformed or unreadable containers."""
    pass


@dataclass
class EstimateRecord:
    """Estimate container contents: Ŝ (P, K) and Ĥ (T, N, K)."""
    S_hat: np.ndarray
    H_hat: np.ndarray
    dims: Tuple[int, int, int, int]
    rho: float
    onebit: bool


class BlockCodec:
    """
    Binary container for received blocks and channel estimates.

    Layout (little-endian):
        16-byte header   12-byte magic + u32 version
        u8 kind          1 = received block, 2 = estimate
        u8 flags         bit 0 one-bit, bit 1 unquantized y present
        u16 reserved
        4 × u32          N, K, T, T_D
        f64              rho (linear)
        u32              number of arrays
        per array        u32 ndim, ndim × u32 shape, row-major complex128
                         data as interleaved real/imag doubles

    A received block stores y_freq (if present) and then r_time (if one-bit);
    an estimate stores Ŝ and then Ĥ.
    """

    MAGIC = b"BLINDCHANBLK"
    VERSION = 1
    KIND_RX = 1
    KIND_ESTIMATE = 2
    FLAG_ONEBIT = 0x01
    FLAG_HAS_Y = 0x02

    _HEADER = struct.Struct("<12sI")
    _META = struct.Struct("<BBHIIIIdI")
    _DTYPE = np.dtype("<c16")

    def __init__(self) -> None:
        self.logger: AppLogger = AppLogger("block_codec.log")

    def _pack(self, kind: int, flags: int, dims: Tuple[int, int, int, int], rho: float,
              arrays: List[np.ndarray]) -> bytes:
        parts = [self._HEADER.pack(self.MAGIC, self.VERSION),
                 self._META.pack(kind, flags, 0, *[int(d) for d in dims], float(rho), len(arrays))]
        for array in arrays:
            array = np.ascontiguousarray(array, dtype=self._DTYPE)
            parts.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
            parts.append(array.tobytes(order="C"))
        return b"".join(parts)

    def _unpack(self, data: bytes, expected_kind: int) -> Tuple[int, Tuple[int, int, int, int], float, List[np.ndarray]]:
        view = memoryview(data)
        if len(view) < self._HEADER.size + self._META.size:
            raise BlockCodecError(f"container truncated: {len(view)} bytes, header needs "
                                  f"{self._HEADER.size + self._META.size}")
        magic, version = self._HEADER.unpack_from(view, 0)
        if magic != self.MAGIC:
            raise BlockCodecError(f"bad magic {magic!r}")
        if version != self.VERSION:
            raise BlockCodecError(f"unsupported container version {version}")
        kind, flags, _, N, K, T, T_D, rho, n_arrays = self._META.unpack_from(view, self._HEADER.size)
        if kind != expected_kind:
            raise BlockCodecError(f"container kind {kind}, expected {expected_kind}")

        offset = self._HEADER.size + self._META.size
        arrays = []
        for index in range(n_arrays):
            if offset + 4 > len(view):
                raise BlockCodecError(f"container truncated before array {index}")
            (ndim,) = struct.unpack_from("<I", view, offset)
            offset += 4
            if ndim > 8 or offset + 4 * ndim > len(view):
                raise BlockCodecError(f"container truncated in the shape of array {index}")
            shape = struct.unpack_from(f"<{ndim}I", view, offset)
            offset += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * self._DTYPE.itemsize
            if offset + size > len(view):
                raise BlockCodecError(f"container truncated in the data of array {index}: "
                                      f"need {size} bytes, {len(view) - offset} left")
            arrays.append(np.frombuffer(view, dtype=self._DTYPE, count=size // self._DTYPE.itemsize,
                                        offset=offset).reshape(shape).astype(complex))
            offset += size
        if offset != len(view):
            raise BlockCodecError(f"{len(view) - offset} trailing bytes after the last array")
        return flags, (N, K, T, T_D), rho, arrays

    def encode_rx(self, rx: RxBlock) -> bytes:
        """Serialize a received block (unquantized and/or one-bit samples)."""
        flags = 0
        arrays = []
        if rx.y_freq is not None:
            flags |= self.FLAG_HAS_Y
            arrays.append(rx.y_freq)
        if rx.r_time is not None:
            flags |= self.FLAG_ONEBIT
            arrays.append(rx.r_time)
        if not arrays:
            raise BlockCodecError("received block holds no samples")
        return self._pack(self.KIND_RX, flags, rx.dims, rx.rho, arrays)

    def decode_rx(self, data: bytes) -> RxBlock:
        """
        Raises:
            BlockCodecError: On truncation, bad magic or version, wrong kind,
                or array shapes that disagree with the stored dims.
        """
        flags, dims, rho, arrays = self._unpack(data, self.KIND_RX)
        N, _, T, _ = dims
        expected = bool(flags & self.FLAG_HAS_Y) + bool(flags & self.FLAG_ONEBIT)
        if len(arrays) != expected or expected == 0:
            raise BlockCodecError(f"flags {flags:#04x} announce {expected} arrays, found {len(arrays)}")
        for array in arrays:
            if array.shape != (T, N):
                raise BlockCodecError(f"array shape {array.shape} does not match dims (T, N) = {(T, N)}")
        y_freq: Optional[np.ndarray] = arrays.pop(0) if flags & self.FLAG_HAS_Y else None
        if flags & self.FLAG_ONEBIT:
            r_time = arrays.pop(0)
            return RxBlock(y_freq=y_freq, rho=rho, dims=dims, r_time=r_time, r_freq=dft_block(r_time))
        return RxBlock(y_freq=y_freq, rho=rho, dims=dims)

    def encode_estimate(self, record: EstimateRecord) -> bytes:
        flags = self.FLAG_ONEBIT if record.onebit else 0
        return self._pack(self.KIND_ESTIMATE, flags, record.dims, record.rho, [record.S_hat, record.H_hat])

    def decode_estimate(self, data: bytes) -> EstimateRecord:
        flags, dims, rho, arrays = self._unpack(data, self.KIND_ESTIMATE)
        if len(arrays) != 2:
            raise BlockCodecError(f"estimate container holds {len(arrays)} arrays, expected 2")
        return EstimateRecord(S_hat=arrays[0], H_hat=arrays[1], dims=dims, rho=rho,
                              onebit=bool(flags & self.FLAG_ONEBIT))

    def write(self, path: str, data: bytes) -> None:
        """
        Raises:
            BlockCodecError: If the file cannot be written.
        """
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "wb") as f:
                f.write(data)
            self.logger.debug(f"Wrote {len(data)} bytes to {path}")
        except OSError as e:
            _, _, exec_tb = sys.exc_info()
            line_number = exec_tb.tb_lineno if exec_tb else "unknown"
            function_name = exec_tb.tb_frame.f_code.co_name if exec_tb else "unknown"
            self.logger.error(f"OSError in '{function_name}' at line {line_number}: {e}")
            raise BlockCodecError(f"cannot write container {path}") from e

    def read(self, path: str) -> bytes:
        """
        Raises:
            BlockCodecError: If the file is missing or unreadable.
        """
        if not os.path.exists(path):
            raise BlockCodecError(f"container not found at path: {path}")
        try:
            with open(path, "rb") as f:
                return f.read()
        except OSError as e:
            self.logger.error(f"Cannot read {path}: {e}")
            raise BlockCodecError(f"cannot read container {path}") from e

    def save_rx(self, path: str, rx: RxBlock) -> None:
        self.write(path, self.encode_rx(rx))

    def load_rx(self, path: str) -> RxBlock:
        try:
            return self.decode_rx(self.read(path))
        except BlockCodecError as e:
            self.logger.error(f"Malformed received-block container {path}: {e}")
            raise

    def save_estimate(self, path: str, record: EstimateRecord) -> None:
        self.write(path, self.encode_estimate(record))

    def load_estimate(self, path: str) -> EstimateRecord:
        return self.decode_estimate(self.read(path))
