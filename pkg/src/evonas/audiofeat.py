"""Waveform-to-feature pipeline: framing, VAD, MFCC, normalization.

The full chain (frame -> energy VAD -> MFCC -> sliding-window mean
normalization -> crop/pad to a fixed 40x300 matrix) either produces a
finite feature matrix or returns None for signals shorter than one frame.
"""

import wave
from dataclasses import dataclass

import numpy as np
import scipy.fft

from evonas.errors import ContractError

SAMPLE_RATE = 16000
N_MFCC = 40
N_MEL_FILTERS = 40
N_FFT = 512
TARGET_FRAMES = 300
LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    """Mono audio samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ContractError("waveform is empty")


def read_wav(path):
    """Read a 16-bit PCM mono RIFF file."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ContractError(f"{path}: expected mono, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ContractError(f"{path}: expected 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, waveform):
    """Write a Waveform as 16-bit PCM mono."""
    pcm = np.round(np.clip(waveform.samples, -1.0, 1.0) * 32768.0)
    pcm = np.clip(pcm, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(waveform.sample_rate)
        fh.writeframes(pcm.tobytes())


def hamming_window(n):
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_signal(waveform, frame_ms=25, hop_ms=10):
    """Split into Hamming-windowed frames.

    At 16 kHz with the defaults: 400-sample frames, 160-sample hop,
    floor((len - 400)/160) + 1 frames.  Too-short signals give an empty
    (0, frame_len) array rather than an error.
    """
    frame_len = waveform.sample_rate * frame_ms // 1000
    hop = waveform.sample_rate * hop_ms // 1000
    x = waveform.samples
    if x.size < frame_len:
        return np.empty((0, frame_len))
    n_frames = (x.size - frame_len) // hop + 1
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx] * hamming_window(frame_len)[None, :]


def energy_vad(frames, margin=3.0):
    """Keep frames whose log energy exceeds the utterance mean minus ``margin``.

    The threshold is relative, so uniform-energy input keeps everything
    and the mask is invariant to overall gain.
    """
    if frames.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    log_e = np.log(np.sum(frames * frames, axis=1) + LOG_FLOOR)
    return log_e > log_e.mean() - margin


def mel_scale(hz):
    return 2595.0 * np.log10(1.0 + hz / 700.0)


def mel_inverse(mel):
    return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)


def mel_filterbank(n_filters=N_MEL_FILTERS, n_fft=N_FFT, sample_rate=SAMPLE_RATE,
                   f_min=0.0, f_max=None):
    """Triangular mel filters over the rfft bins, [n_filters, n_fft//2 + 1]."""
    if f_max is None:
        f_max = sample_rate / 2.0
    edges = mel_inverse(np.linspace(mel_scale(f_min), mel_scale(f_max),
                                    n_filters + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    bank = np.zeros((n_filters, bin_freqs.size))
    for i in range(n_filters):
        left, center, right = edges[i], edges[i + 1], edges[i + 2]
        up = (bin_freqs - left) / (center - left)
        down = (right - bin_freqs) / (right - center)
        bank[i] = np.maximum(0.0, np.minimum(up, down))
    return bank


_FILTERBANK = None


def _filterbank():
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def mfcc_from_frames(frames):
    """40-dimensional MFCCs, one column per frame.

    Magnitude spectrum on a 512-point FFT, 40 mel filters over 0..8 kHz,
    log with a small floor, then an orthonormal DCT-II keeping all 40
    coefficients (c0 included), so the mel log-energies are recoverable
    by the inverse transform.
    """
    spectrum = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1))
    mel = _filterbank() @ spectrum.T
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    return scipy.fft.dct(logmel, type=2, axis=0, norm="ortho")


def mel_energies_from_mfcc(coeffs):
    """Invert the DCT back to log mel energies (for analysis and tests)."""
    return scipy.fft.idct(coeffs, type=2, axis=0, norm="ortho")


def mean_normalize(feat, window_frames=TARGET_FRAMES):
    """Subtract a sliding-window mean from each column.

    Each column is centered on the mean of a window_frames-wide window
    around it; near the edges the window shifts inward so it always spans
    exactly min(window_frames, T) columns.  For T <= window_frames every
    window is the whole utterance, i.e. global mean subtraction, which
    makes the operation idempotent there.
    """
    d, t = feat.shape
    width = min(window_frames, t)
    csum = np.concatenate([np.zeros((d, 1)), np.cumsum(feat, axis=1)], axis=1)
    starts = np.clip(np.arange(t) - width // 2, 0, t - width)
    means = (csum[:, starts + width] - csum[:, starts]) / width
    return feat - means


def fix_length(feat, target=TARGET_FRAMES, mode="eval", rng=None):
    """Crop or cyclically pad the time axis to exactly ``target`` columns.

    Longer inputs are cropped: a random window in "train" mode (rng
    required), the centered window in "eval" mode.  Shorter inputs repeat
    columns cyclically, so only existing columns ever appear.
    """
    d, t = feat.shape
    if t < 1:
        raise ContractError("fix_length needs at least one frame")
    if t == target:
        return feat
    if t > target:
        if mode == "train":
            if rng is None:
                raise ContractError("train-mode crop requires an rng")
            start = int(rng.integers(0, t - target + 1))
        else:
            start = (t - target) // 2
        return feat[:, start:start + target]
    return feat[:, np.arange(target) % t]


def extract_features(waveform, mode="eval", rng=None, vad_margin=3.0):
    """Full pipeline to a 40 x 300 matrix, or None for too-short input."""
    frames = frame_signal(waveform)
    if frames.shape[0] == 0:
        return None
    frames = frames[energy_vad(frames, vad_margin)]
    if frames.shape[0] == 0:
        return None
    feat = mfcc_from_frames(frames)
    feat = mean_normalize(feat)
    return fix_length(feat, mode=mode, rng=rng)
