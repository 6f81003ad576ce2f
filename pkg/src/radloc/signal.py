"""Pilot observation model: y = W^H H f + n, noise added after combining."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import ArrayGeometry, GridConfig, PathParams, channel_tensor


class SignalError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TxRxConfig:
    """Known pilots and combiners.

    ``precoders`` has shape (N, K, N_tx) and ``combiners`` shape
    (K, N_rx, M_rx). Precoders are scaled so the mean of ||f||^2 over the
    grid is ``tx_power / W``.
    """

    precoders: np.ndarray
    combiners: np.ndarray
    tx_power: float
    noise_psd: float

    def __post_init__(self):
        f = np.asarray(self.precoders, dtype=complex)
        w = np.asarray(self.combiners, dtype=complex)
        if f.ndim != 3 or w.ndim != 3 or f.shape[1] != w.shape[0]:
            raise SignalError("precoders must be (N, K, N_tx) and combiners (K, N_rx, M_rx)")
        eye = np.eye(w.shape[2])
        for k in range(w.shape[0]):
            if np.max(np.abs(w[k].conj().T @ w[k] - eye)) > 1e-10:
                raise SignalError(f"combiner for symbol {k} is not orthonormal")
        if self.noise_psd < 0 or self.tx_power <= 0:
            raise SignalError("tx_power must be positive and noise_psd non-negative")
        object.__setattr__(self, "precoders", f)
        object.__setattr__(self, "combiners", w)

    @property
    def n_tx(self) -> int:
        return self.precoders.shape[2]

    @property
    def n_rx(self) -> int:
        return self.combiners.shape[1]

    @property
    def m_rx(self) -> int:
        return self.combiners.shape[2]

    def mean_precoder_power(self) -> float:
        return float(np.mean(np.sum(np.abs(self.precoders) ** 2, axis=-1)))

    @classmethod
    def default(cls, grid: GridConfig, n_tx: int = 1, n_rx: int = 1, *, tx_power: float = 1.0,
                noise_psd: float = 1e-12, m_rx: int | None = None,
                seed=None) -> "TxRxConfig":
        """Unit-modulus pilots and orthonormal combiners.

        With one Tx antenna the pilot is constant. With several, each symbol
        uses a column of a DFT matrix (cycling over symbols) so the Tx side
        can be resolved across symbols. Combiners are the identity when
        ``m_rx == n_rx`` and seeded random orthonormal bases otherwise.
        """
        N, K = grid.n_subcarriers, grid.n_symbols
        m_rx = n_rx if m_rx is None else m_rx
        if not 1 <= m_rx <= n_rx:
            raise SignalError("need 1 <= M_rx <= N_rx")
        amp = np.sqrt(tx_power / grid.bandwidth / n_tx)
        if n_tx == 1:
            f = np.full((N, K, 1), amp, dtype=complex)
        else:
            dft = np.exp(-2j * np.pi * np.outer(np.arange(n_tx), np.arange(n_tx)) / n_tx)
            cols = dft[:, np.arange(K) % n_tx].T  # (K, n_tx)
            f = amp * np.broadcast_to(cols, (N, K, n_tx)).copy()
        if m_rx == n_rx:
            w = np.broadcast_to(np.eye(n_rx, dtype=complex), (K, n_rx, n_rx)).copy()
        else:
            rng = np.random.default_rng(seed)
            w = np.empty((K, n_rx, m_rx), dtype=complex)
            for k in range(K):
                g = rng.standard_normal((n_rx, m_rx)) + 1j * rng.standard_normal((n_rx, m_rx))
                w[k], _ = np.linalg.qr(g)
        return cls(f, w, tx_power, noise_psd)


@dataclass(frozen=True, eq=False)
class Observation:
    """Received samples y[n, k, m]."""

    y: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.y.shape

    def to_bytes(self) -> bytes:
        """Little-endian layout: uint64 N, K, M_rx, then (re, im) float64 pairs
        in C order over (n, k, m)."""
        N, K, M = self.y.shape
        body = np.empty((N, K, M, 2), dtype="<f8")
        body[..., 0] = self.y.real
        body[..., 1] = self.y.imag
        return struct.pack("<QQQ", N, K, M) + body.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Observation":
        N, K, M = struct.unpack_from("<QQQ", data, 0)
        body = np.frombuffer(data, dtype="<f8", offset=24)
        if body.size != N * K * M * 2:
            raise SignalError("payload size does not match header")
        body = body.reshape(N, K, M, 2)
        return cls(body[..., 0] + 1j * body[..., 1])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Observation":
        return cls.from_bytes(Path(path).read_bytes())


def noiseless_observation(paths: Sequence[PathParams], grid: GridConfig, txrx: TxRxConfig,
                          rx_array: ArrayGeometry, tx_array: ArrayGeometry) -> np.ndarray:
    H = channel_tensor(paths, grid, rx_array, tx_array)
    return combine(H, txrx)


def combine(H: np.ndarray, txrx: TxRxConfig) -> np.ndarray:
    """W_k^H H_{n,k} f_{n,k} for a channel tensor (N, K, N_rx, N_tx)."""
    Hf = np.einsum("nkrt,nkt->nkr", H, txrx.precoders)
    return np.einsum("krm,nkr->nkm", txrx.combiners.conj(), Hf)


def observe(paths: Sequence[PathParams], grid: GridConfig, txrx: TxRxConfig,
            rx_array: ArrayGeometry | None = None, tx_array: ArrayGeometry | None = None,
            seed=None) -> Observation:
    rx_array = rx_array or ArrayGeometry.single()
    tx_array = tx_array or ArrayGeometry.single()
    if rx_array.n_elements != txrx.n_rx or tx_array.n_elements != txrx.n_tx:
        raise SignalError("array sizes do not match the Tx/Rx configuration")
    if txrx.precoders.shape[:2] != (grid.n_subcarriers, grid.n_symbols):
        raise SignalError("precoder grid does not match GridConfig")
    mu = noiseless_observation(paths, grid, txrx, rx_array, tx_array)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(mu.shape) + 1j * rng.standard_normal(mu.shape)
    return Observation(mu + np.sqrt(txrx.noise_psd / 2) * noise)


def integrated_snr(path: PathParams, grid: GridConfig, txrx: TxRxConfig,
                   rx_array: ArrayGeometry | None = None,
                   tx_array: ArrayGeometry | None = None) -> float:
    """Coherent energy of one path over all (n, k) divided by N0, in dB."""
    rx_array = rx_array or ArrayGeometry.single()
    tx_array = tx_array or ArrayGeometry.single()
    mu = noiseless_observation([path], grid, txrx, rx_array, tx_array)
    return float(10 * np.log10(np.sum(np.abs(mu) ** 2) / txrx.noise_psd))
