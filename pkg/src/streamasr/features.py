"""Streaming log-mel frontend with causal local normalization.

Raw audio arrives in arbitrary chunks. Frames are cut on 25ms windows with a
10ms hop, turned into 80-dim log mel filterbank energies, and normalized per
dimension against a sliding window of the most recent frames (the current
frame plus up to ``norm_window - 1`` previous ones). All per-frame work is
done frame-by-frame with fixed-shape operations so the output is bit-identical
under any chunking of the same audio.

States are single-stream and externally synchronized; they can move between
worker threads as long as calls never overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    window_ms: int = 25
    hop_ms: int = 10
    n_mels: int = 80
    n_fft: int = 512
    log_floor: float = 1e-10
    norm_window: int = 300
    norm_eps: float = 1e-5
    # running sums are rebuilt exactly from the ring buffer this often,
    # bounding float drift without changing per-frame op order
    norm_recompute_every: int = 10_000

    @property
    def window_samples(self) -> int:
        return self.sample_rate * self.window_ms // 1000

    @property
    def hop_samples(self) -> int:
        return self.sample_rate * self.hop_ms // 1000


@dataclass
class AudioChunk:
    """A slice of mono PCM amplitudes in [-1, 1]. May be empty (heartbeat)."""

    samples: np.ndarray
    sample_rate: int = 16000


@dataclass
class FeatureFrame:
    """One 80-dim log-mel frame with its 0-based index from stream start."""

    values: np.ndarray
    frame_index: int


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters spanning 0 Hz to Nyquist, HTK mel scale.

    Returns an (n_fft//2 + 1, n_mels) matrix applied to power spectra.
    """

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_bins) * sample_rate / n_fft

    fb = np.zeros((n_bins, n_mels), dtype=np.float32)
    for m in range(n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (bin_freqs - left) / max(center - left, 1e-12)
        falling = (right - bin_freqs) / max(right - center, 1e-12)
        fb[:, m] = np.maximum(0.0, np.minimum(rising, falling)).astype(np.float32)
    return fb


class NormalizerState:
    """Ring buffer of recent raw frames plus running per-dim sum / sum-of-squares."""

    def __init__(self, n_dims: int, window: int, eps: float, recompute_every: int = 10_000):
        if window < 1:
            raise ConfigError("normalization window must be >= 1")
        self.window = window
        self.eps = eps
        self.recompute_every = recompute_every
        self.ring = np.zeros((window, n_dims), dtype=np.float32)
        self.count = 0
        self.head = 0
        self.frames_seen = 0
        self.sum = np.zeros(n_dims, dtype=np.float64)
        self.sumsq = np.zeros(n_dims, dtype=np.float64)

    def push(self, frame: np.ndarray) -> None:
        f64 = frame.astype(np.float64)
        if self.count == self.window:
            old = self.ring[self.head].astype(np.float64)
            self.sum -= old
            self.sumsq -= old * old
        else:
            self.count += 1
        self.ring[self.head] = frame
        self.head = (self.head + 1) % self.window
        self.sum += f64
        self.sumsq += f64 * f64
        self.frames_seen += 1
        if self.recompute_every and self.frames_seen % self.recompute_every == 0:
            self.recompute()

    def recompute(self) -> None:
        live = self.window_frames().astype(np.float64)
        self.sum = live.sum(axis=0)
        self.sumsq = (live * live).sum(axis=0)

    def window_frames(self) -> np.ndarray:
        """Frames currently in the window, oldest first."""
        if self.count < self.window:
            return self.ring[: self.count]
        return np.roll(self.ring, -self.head, axis=0)


def local_normalize(norm: NormalizerState, frame: np.ndarray) -> np.ndarray:
    """Normalize one raw frame against the window ending at that frame.

    Fully causal: the window is the current frame plus up to window-1 previous
    frames. Degenerate variance is guarded by eps, so a constant stream maps
    to all-zero outputs.
    """
    norm.push(frame)
    mean = norm.sum / norm.count
    var = norm.sumsq / norm.count - mean * mean
    np.maximum(var, 0.0, out=var)
    out = (frame.astype(np.float64) - mean) / np.sqrt(var + norm.eps)
    return out.astype(np.float32)


class FrontendState:
    """Per-stream framing state: leftover samples and the frame counter."""

    def __init__(self, config: FrontendConfig | None = None):
        self.config = config or FrontendConfig()
        cfg = self.config
        if cfg.n_fft < cfg.window_samples:
            raise ConfigError("n_fft smaller than the analysis window")
        self.residual = np.zeros(0, dtype=np.float32)
        self.frames_emitted = 0
        self.window = np.hamming(cfg.window_samples).astype(np.float32)
        self.filterbank = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate)


def extract_frames(state: FrontendState, chunk: AudioChunk) -> list[FeatureFrame]:
    """Emit one raw log-mel frame per complete analysis window at the hop rate.

    Tail samples that cannot fill a window yet stay buffered in the state, so
    concatenating results over any chunking equals single-shot extraction.
    """
    cfg = state.config
    if chunk.sample_rate != cfg.sample_rate:
        raise ConfigError(
            f"chunk sample rate {chunk.sample_rate} != stream rate {cfg.sample_rate}"
        )
    samples = np.asarray(chunk.samples, dtype=np.float32)
    if samples.size and np.isnan(samples).any():
        raise InputError("audio chunk contains NaN samples")

    buf = np.concatenate([state.residual, samples]) if samples.size else state.residual
    win, hop = cfg.window_samples, cfg.hop_samples
    frames: list[FeatureFrame] = []
    pos = 0
    while buf.size - pos >= win:
        frame = _logmel_frame(state, buf[pos : pos + win])
        frames.append(FeatureFrame(frame, state.frames_emitted))
        state.frames_emitted += 1
        pos += hop
    state.residual = buf[pos:].copy()
    return frames


def _logmel_frame(state: FrontendState, window_samples: np.ndarray) -> np.ndarray:
    cfg = state.config
    tapered = window_samples * state.window
    spectrum = np.fft.rfft(tapered, n=cfg.n_fft)
    power = (spectrum.real * spectrum.real + spectrum.imag * spectrum.imag).astype(np.float32)
    mel = power @ state.filterbank
    return np.log(np.maximum(mel, np.float32(cfg.log_floor)))


class Frontend:
    """Convenience wrapper running extraction and normalization per stream."""

    def __init__(self, config: FrontendConfig | None = None):
        self.state = FrontendState(config)
        cfg = self.state.config
        self.normalizer = NormalizerState(
            cfg.n_mels, cfg.norm_window, cfg.norm_eps, cfg.norm_recompute_every
        )

    def process(self, samples: np.ndarray, sample_rate: int | None = None) -> np.ndarray:
        """Push raw samples, get back newly available normalized frames (k, n_mels)."""
        rate = sample_rate if sample_rate is not None else self.state.config.sample_rate
        raw = extract_frames(self.state, AudioChunk(samples, rate))
        if not raw:
            return np.zeros((0, self.state.config.n_mels), dtype=np.float32)
        return np.stack([local_normalize(self.normalizer, f.values) for f in raw])
