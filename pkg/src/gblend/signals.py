"""Raw-epoch ingestion and log-magnitude spectrogram extraction.

An epoch is 30 seconds of C-channel signal at 100 Hz (3000 samples). Its
time-frequency view is built from 2-second Hamming-windowed frames with 50%
overlap, zero-padded to a 256-point FFT: 129 one-sided magnitude bins by 29
frames per channel, log-transformed. Per-(bin, channel) normalization
statistics are fitted on a training corpus and applied everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 100
EPOCH_SAMPLES = 3000
FRAME_LEN = 200          # 2 s windows
HOP = 100                # 50% overlap
FFT_SIZE = 256
FREQ_BINS = FFT_SIZE // 2 + 1          # 129
TIME_FRAMES = (EPOCH_SAMPLES - FRAME_LEN) // HOP + 1  # 29
N_CLASSES = 5

LOG_FLOOR = 1e-12        # added inside the log so silent frames stay finite
STD_FLOOR = 1e-8         # zero-variance bins clamp to this

# Hamming window written out explicitly so the byte-level result is pinned to
# this exact expression rather than a library's evaluation order.
_WINDOW = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(FRAME_LEN) / (FRAME_LEN - 1))


class SignalFormatError(ValueError):
    """Malformed raw-signal file: bad header, truncated payload, bad labels."""


def _check_epoch(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2 or samples.shape[0] != EPOCH_SAMPLES:
        raise ValueError(f"epoch must be ({EPOCH_SAMPLES}, C), got {samples.shape}")
    return samples


def stft_log(epoch: np.ndarray) -> np.ndarray:
    """Log-magnitude spectrogram of one epoch: (3000, C) -> (129, 29, C)."""
    samples = _check_epoch(epoch)
    frames = np.lib.stride_tricks.sliding_window_view(samples, FRAME_LEN, axis=0)
    frames = frames[::HOP]                     # (T, C, FRAME_LEN)
    spec = np.fft.rfft(frames * _WINDOW, n=FFT_SIZE, axis=-1)   # (T, C, F)
    mag = np.abs(spec)
    return np.ascontiguousarray(np.log(mag + LOG_FLOOR).transpose(2, 0, 1))


@dataclass
class NormalizationStats:
    """Per-(frequency bin, channel) mean and standard deviation."""

    mean: np.ndarray   # (F, C)
    std: np.ndarray    # (F, C)

    def normalize(self, image: np.ndarray) -> np.ndarray:
        return (image - self.mean[:, None, :]) / self.std[:, None, :]

    def unnormalize(self, image: np.ndarray) -> np.ndarray:
        return image * self.std[:, None, :] + self.mean[:, None, :]

    def save(self, path) -> None:
        np.savez(path, mean=self.mean, std=self.std)

    @classmethod
    def load(cls, path) -> "NormalizationStats":
        with np.load(path) as f:
            return cls(mean=f["mean"].copy(), std=f["std"].copy())


def fit_normalization(corpus) -> NormalizationStats:
    """Fit per-bin stats over a corpus of (F, T, C) images (all frames pooled)."""
    images = np.asarray(corpus, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("corpus must be a non-empty collection of (F, T, C) images")
    mean = images.mean(axis=(0, 2))
    std = images.std(axis=(0, 2))
    return NormalizationStats(mean=mean, std=np.maximum(std, STD_FLOOR))


# ---------------------------------------------------------------------------
# Raw-signal file format
#
#   GBLEND1 <n_epochs> <n_channels> <sample_rate>\n
#   <n_epochs * 3000 * n_channels little-endian float32, in (epoch, sample,
#    channel) order: channel varies fastest, then sample, then epoch>
#   <n_epochs label bytes, each in 0..4>

_MAGIC = "GBLEND1"


def save_raw_signals(path, epochs: np.ndarray, labels: np.ndarray) -> None:
    """Write epochs (n, 3000, C) and integer stage labels (n,) to ``path``."""
    epochs = np.asarray(epochs, dtype=np.float64)
    labels = np.asarray(labels)
    if epochs.ndim != 3 or epochs.shape[1] != EPOCH_SAMPLES:
        raise ValueError(f"epochs must be (n, {EPOCH_SAMPLES}, C), got {epochs.shape}")
    if labels.shape != (epochs.shape[0],):
        raise ValueError("labels must be one per epoch")
    if not np.isin(labels, range(N_CLASSES)).all():
        raise ValueError("labels must lie in 0..4")
    with open(path, "wb") as f:
        f.write(f"{_MAGIC} {epochs.shape[0]} {epochs.shape[2]} {SAMPLE_RATE}\n".encode())
        f.write(epochs.astype("<f4").tobytes())
        f.write(labels.astype(np.uint8).tobytes())


def load_raw_signals(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a raw-signal file; returns (epochs (n, 3000, C) float64, labels (n,))."""
    with open(path, "rb") as f:
        header = f.readline()
        try:
            magic, n_epochs, n_channels, rate = header.decode("ascii").split()
            n_epochs, n_channels, rate = int(n_epochs), int(n_channels), int(rate)
        except (UnicodeDecodeError, ValueError):
            raise SignalFormatError(f"malformed header {header!r}") from None
        if magic != _MAGIC:
            raise SignalFormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        if rate != SAMPLE_RATE:
            raise SignalFormatError(f"unsupported sample rate {rate}; only {SAMPLE_RATE} Hz")
        if n_channels not in (1, 2, 3):
            raise SignalFormatError(f"channel count must be 1..3, got {n_channels}")
        payload = f.read()
    n_values = n_epochs * EPOCH_SAMPLES * n_channels
    expected = n_values * 4 + n_epochs
    if len(payload) != expected:
        raise SignalFormatError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}")
    samples = np.frombuffer(payload[:n_values * 4], dtype="<f4").astype(np.float64)
    epochs = samples.reshape(n_epochs, EPOCH_SAMPLES, n_channels)
    labels = np.frombuffer(payload[n_values * 4:], dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= N_CLASSES:
        raise SignalFormatError(f"label {labels.max()} outside 0..{N_CLASSES - 1}")
    return epochs, labels
