"""Bit-level link: Gray 16-QAM over OFDM blocks with AWGN and optional block Rayleigh fading.

SNR is Es/N0 per complex symbol with unit average symbol energy, so the noise
variance per symbol is 10^(-snr_db/10).
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special
from scipy.interpolate import interp1d

from .errors import PayloadError

logger = logging.getLogger(__name__)

SCALE = 1.0 / math.sqrt(10.0)
# per-axis level indexed by the 2-bit Gray word: 00 -> -3, 01 -> -1, 10 -> +3, 11 -> +1
AXIS_LEVELS = np.array([-3.0, -1.0, 3.0, 1.0])
PILOT_SYMBOL = complex(3.0, 3.0) * SCALE
ESTIMATE_FLOOR = 1e-6


class LinkConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_subcarriers: int = Field(default=64, ge=2)
    pilot_every: int = Field(default=8, ge=1)
    fading: Literal["unit_flat", "rayleigh_block"] = "unit_flat"
    estimation: Literal["perfect", "least_squares"] = "perfect"

    @model_validator(mode="after")
    def _pilot_grid(self) -> "LinkConfig":
        if self.num_subcarriers % self.pilot_every != 0:
            raise ValueError("pilot_every must divide num_subcarriers")
        if self.estimation == "least_squares" and self.num_subcarriers // self.pilot_every < 2:
            raise ValueError("least_squares estimation needs at least 2 pilots per block")
        return self

    @property
    def pilot_positions(self) -> np.ndarray:
        return np.arange(0, self.num_subcarriers, self.pilot_every)

    @property
    def data_per_block(self) -> int:
        if self.estimation == "least_squares":
            return self.num_subcarriers - self.num_subcarriers // self.pilot_every
        return self.num_subcarriers


@dataclass(frozen=True)
class SymbolBlock:
    symbols: np.ndarray
    modulation: str = "16qam"

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True)
class LinkReport:
    bits_sent: int
    bit_errors: int
    ber: float
    snr_db: float
    symbols_sent: int = 0
    estimate_floored: bool = False


def constellation() -> np.ndarray:
    """All 16 points in order of their 4-bit word b3b2b1b0."""
    words = np.arange(16)
    return (AXIS_LEVELS[words >> 2] + 1j * AXIS_LEVELS[words & 0b11]) * SCALE


def qam16_modulate(bits) -> SymbolBlock:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 4 != 0:
        raise PayloadError(f"16-QAM needs a multiple of 4 bits, got {bits.size}")
    quads = bits.reshape(-1, 4)
    i_word = quads[:, 0] * 2 + quads[:, 1]
    q_word = quads[:, 2] * 2 + quads[:, 3]
    return SymbolBlock(symbols=(AXIS_LEVELS[i_word] + 1j * AXIS_LEVELS[q_word]) * SCALE)


def _axis_bits(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    scaled = values / SCALE
    return (scaled >= 0).astype(np.uint8), (np.abs(scaled) < 2).astype(np.uint8)


def qam16_demodulate(symbols) -> np.ndarray:
    """Hard-decision Gray demapping back to bits."""
    symbols = np.asarray(symbols, dtype=complex)
    b3, b2 = _axis_bits(symbols.real)
    b1, b0 = _axis_bits(symbols.imag)
    return np.stack([b3, b2, b1, b0], axis=1).reshape(-1)


def apply_channel(
    x: SymbolBlock,
    cfg: LinkConfig,
    snr_db: float,
    rng: np.random.Generator,
) -> Tuple[SymbolBlock, np.ndarray]:
    """y = h * x + z; returns the received block and the true gains."""
    n = len(x)
    if cfg.fading == "rayleigh_block":
        blocks = -(-n // cfg.num_subcarriers)
        gains = (rng.standard_normal((blocks, cfg.num_subcarriers)) + 1j * rng.standard_normal((blocks, cfg.num_subcarriers))) / math.sqrt(2.0)
        h = gains.reshape(-1)[:n]
    else:
        h = np.ones(n, dtype=complex)

    noise_std = math.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
    z = noise_std * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return SymbolBlock(symbols=h * x.symbols + z), h


def equalize(y, h_hat) -> Tuple[SymbolBlock, bool]:
    """Element-wise y / h_hat; estimates below the floor are replaced and flagged."""
    y = np.asarray(y.symbols if isinstance(y, SymbolBlock) else y, dtype=complex)
    h_hat = np.asarray(h_hat, dtype=complex)
    if y.shape != h_hat.shape:
        raise PayloadError(f"received block and channel estimate lengths differ: {y.shape} vs {h_hat.shape}")
    small = np.abs(h_hat) < ESTIMATE_FLOOR
    floored = bool(np.any(small))
    if floored:
        phase = np.where(h_hat == 0, 1.0, h_hat / np.maximum(np.abs(h_hat), np.finfo(float).tiny))
        h_hat = np.where(small, ESTIMATE_FLOOR * phase, h_hat)
    return SymbolBlock(symbols=y / h_hat), floored


def estimate_channel_ls(received_block: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    """LS estimate at the pilots, linear in between and linearly extrapolated past the edges."""
    pilots = cfg.pilot_positions
    at_pilots = received_block[pilots] / PILOT_SYMBOL
    grid = np.arange(cfg.num_subcarriers)
    real = interp1d(pilots, at_pilots.real, kind="linear", fill_value="extrapolate")(grid)
    imag = interp1d(pilots, at_pilots.imag, kind="linear", fill_value="extrapolate")(grid)
    return real + 1j * imag


def frame_symbols(data: SymbolBlock, cfg: LinkConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Lay data symbols into OFDM blocks of K subcarriers; returns the block grid and the data mask."""
    per_block = cfg.data_per_block
    blocks = max(1, -(-len(data) // per_block))
    data_mask = np.ones(cfg.num_subcarriers, dtype=bool)
    if cfg.estimation == "least_squares":
        data_mask[cfg.pilot_positions] = False

    grid = np.full((blocks, cfg.num_subcarriers), PILOT_SYMBOL, dtype=complex)
    padded = np.full(blocks * per_block, AXIS_LEVELS[0] * SCALE * (1 + 1j))
    padded[: len(data)] = data.symbols
    grid[:, data_mask] = padded.reshape(blocks, per_block)
    return grid, data_mask


def transmit_bytes(
    payload: bytes,
    snr_db: float,
    cfg: LinkConfig = LinkConfig(),
    rng: Optional[np.random.Generator] = None,
) -> Tuple[bytes, LinkReport]:
    """Send a byte payload through modulation, channel, equalisation and hard demodulation."""
    if len(payload) == 0:
        raise PayloadError("payload must not be empty")
    rng = rng if rng is not None else np.random.default_rng(0)

    bits = np.unpackbits(np.frombuffer(bytes(payload), dtype=np.uint8))
    data = qam16_modulate(bits)
    grid, data_mask = frame_symbols(data, cfg)

    received, h = apply_channel(SymbolBlock(symbols=grid.reshape(-1)), cfg, snr_db, rng)
    rx_grid = received.symbols.reshape(grid.shape)
    if cfg.estimation == "least_squares":
        h_hat = np.vstack([estimate_channel_ls(row, cfg) for row in rx_grid]).reshape(-1)
    else:
        h_hat = h
    equalized, floored = equalize(received, h_hat)
    if floored:
        logger.warning(f"channel estimate floored at {ESTIMATE_FLOOR} for some subcarriers (snr {snr_db:.1f} dB)")

    data_rx = equalized.symbols.reshape(grid.shape)[:, data_mask].reshape(-1)[: len(data)]
    bits_rx = qam16_demodulate(data_rx)
    errors = int(np.count_nonzero(bits_rx != bits))
    report = LinkReport(
        bits_sent=int(bits.size),
        bit_errors=errors,
        ber=errors / bits.size,
        snr_db=float(snr_db),
        symbols_sent=int(grid.size),
        estimate_floored=floored,
    )
    return np.packbits(bits_rx).tobytes(), report


def _q(x: float) -> float:
    return 0.5 * float(special.erfc(x / math.sqrt(2.0)))


def analytic_ber_16qam(snr_db: float) -> float:
    """Exact Gray-coded 16-QAM bit error rate over AWGN at Es/N0 = snr_db."""
    a = math.sqrt(10.0 ** (snr_db / 10.0) / 5.0)
    return (3.0 * _q(a) + 2.0 * _q(3.0 * a) - _q(5.0 * a)) / 4.0
