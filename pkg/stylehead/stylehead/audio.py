'''
Log-Mel features and the auto-regressive predictive coding (APC) audio encoder.

The encoder is a 3-layer GRU over 80-band log-Mel frames. Its final layer state
is mapped by a bias-free linear layer and normalized per row, giving the
512-d stream feature h of every audio frame (120 per second).
'''
from __future__ import annotations
import functools
import hashlib
import logging
import math
import os
from fractions import Fraction
from typing import List, Optional, Sequence, Union

import librosa
import numpy as np
import soundfile as sf
import torch
import torch.nn as nn
from tqdm import tqdm

from . import container
from .config import Config
from .errors import DatasetIOError, InvalidArgumentError
from .tensor_util import np2tensor, tensor2np

logger = logging.getLogger(__name__)

N_MELS = 80
N_FFT = 512
FRAME_SHIFT_S = 1. / 120
FRAME_LENGTH_S = 1. / 60
MEL_FLOOR = 1e-10
FEATURE_DIM = 512
AUDIO_FRAME_RATE = 120


class AudioClip:
    def __init__(self, samples, sample_rate: int = None):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidArgumentError("an audio clip is a non-empty 1-D sample array, got shape {}".format(samples.shape))
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("audio samples must be finite")
        self.samples = samples
        self.sample_rate = Config.sample_rate if sample_rate is None else int(sample_rate)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


class MelSpectrogram:
    def __init__(self, frames, frame_shift_s: float = FRAME_SHIFT_S, frame_length_s: float = FRAME_LENGTH_S):
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != N_MELS or frames.shape[0] < 1:
            raise InvalidArgumentError("a mel spectrogram has shape (N >= 1, 80), got {}".format(frames.shape))
        if not np.all(np.isfinite(frames)):
            raise InvalidArgumentError("mel spectrogram values must be finite")
        self.frames = frames
        self.frame_shift_s = frame_shift_s
        self.frame_length_s = frame_length_s

    def __len__(self) -> int:
        return self.frames.shape[0]


class AudioFeatureSequence:
    '''
    per-audio-frame stream features h (N x 512).
    '''
    def __init__(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or not np.all(np.isfinite(features)):
            raise InvalidArgumentError("audio features must be a finite (N, dim) array")
        self.features = features

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def read_wav(path: str) -> AudioClip:
    '''
    PCM wav -> AudioClip; multi-channel input is averaged to mono.
    '''
    try:
        data, sample_rate = sf.read(path, dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise DatasetIOError("cannot read wav ({})".format(e), path) from e
    if data.shape[1] > 1:
        logger.warning("%s has %d channels, averaging to mono", path, data.shape[1])
    return AudioClip(data.mean(axis=1), sample_rate)

def write_wav(path: str, clip: AudioClip) -> None:
    try:
        sf.write(path, np.clip(clip.samples, -1., 1.), clip.sample_rate, subtype="PCM_16")
    except (RuntimeError, OSError) as e:
        raise DatasetIOError("cannot write wav ({})".format(e), path) from e


def _exact(seconds: float) -> Fraction:
    return Fraction(seconds).limit_denominator(1 << 20)

def num_frames(n_samples: int, sample_rate: int, frame_length_s: float = FRAME_LENGTH_S,
               frame_shift_s: float = FRAME_SHIFT_S) -> int:
    '''
    floor((duration - frame_length) / frame_shift) + 1, evaluated in exact rationals.
    '''
    span = Fraction(n_samples, sample_rate) - _exact(frame_length_s)
    if span < 0:
        return 0
    return math.floor(span / _exact(frame_shift_s)) + 1

def frame_starts(n_frames: int, sample_rate: int, frame_shift_s: float = FRAME_SHIFT_S) -> np.ndarray:
    '''
    frame k starts at round(k * sample_rate * frame_shift); the shift need not be a whole sample count.
    '''
    step = _exact(frame_shift_s) * sample_rate
    return np.array([int(round(k * step)) for k in range(n_frames)], dtype=np.int64)

def frame_window(sample_rate: int, frame_length_s: float = FRAME_LENGTH_S) -> int:
    return int(round(sample_rate * frame_length_s))


@functools.lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int = N_FFT, n_mels: int = N_MELS) -> np.ndarray:
    return librosa.filters.mel(sr=sample_rate, n_fft=n_fft, n_mels=n_mels, dtype=np.float64)


def compute_log_mel(clip: AudioClip, n_mels: int = N_MELS, n_fft: int = N_FFT) -> MelSpectrogram:
    '''
    Hann-windowed 512-point STFT magnitude -> mel filterbank -> natural log with a 1e-10 floor,
    1/60 s frames every 1/120 s.
    '''
    win = frame_window(clip.sample_rate)
    n = num_frames(clip.samples.size, clip.sample_rate)
    # examination
    if n < 1:
        raise InvalidArgumentError("clip of {:.4f}s is shorter than one frame ({:.4f}s)".format(
            clip.duration, FRAME_LENGTH_S))
    if win > n_fft:
        raise InvalidArgumentError("a {}-sample frame does not fit a {}-point STFT, resample to 16 kHz".format(win, n_fft))
    # examination done

    # the last window may reach one sample past the clip; it reads silence there
    samples = torch.as_tensor(np.pad(clip.samples, (0, win)), dtype=torch.float64)
    index = torch.as_tensor(frame_starts(n, clip.sample_rate))[:, None] + torch.arange(win)
    frames = samples[index]
    window = torch.hann_window(win, periodic=False, dtype=torch.float64)
    magnitude = torch.fft.rfft(frames * window, n=n_fft).abs()
    fb = torch.as_tensor(mel_filterbank(clip.sample_rate, n_fft, n_mels))
    mel = magnitude @ fb.T
    return MelSpectrogram(torch.log(torch.clamp(mel, min=MEL_FLOOR)).numpy())


class APCModel(nn.Module):
    '''
    3-layer GRU encoder, the manifold projection and the linear postnet predicting future frames.
    '''
    def __init__(self, n_mels: int = N_MELS, hidden: int = FEATURE_DIM, num_layers: int = 3):
        super().__init__()
        self.n_mels = n_mels
        self.hidden = hidden
        self.gru = nn.GRU(n_mels, hidden, num_layers=num_layers, batch_first=True)
        self.manifold = nn.Linear(hidden, hidden, bias=False)
        self.postnet = nn.Linear(hidden, n_mels)
        self.to(device=Config.device, dtype=Config.dtype)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        '''
        mel: B x N x 80 -> final layer states h3: B x N x hidden
        '''
        h3, _ = self.gru(mel)
        return h3


def l2_normalize_rows(z):
    '''
    unit L2 norm per row; all-zero rows pass through unchanged.
    '''
    as_numpy = not isinstance(z, torch.Tensor)
    t = np2tensor(z) if as_numpy else z
    norms = t.norm(dim=-1, keepdim=True)
    zero_rows = norms == 0
    if bool(zero_rows.any()):
        logger.warning("%d zero rows passed through the manifold normalization", int(zero_rows.sum()))
    out = t / torch.where(zero_rows, torch.ones_like(norms), norms)
    return tensor2np(out) if as_numpy else out

def project_to_manifold(h3, model: Optional[APCModel] = None):
    '''
    learned linear map (bias-free) followed by per-row L2 normalization.
    '''
    as_numpy = not isinstance(h3, torch.Tensor)
    t = np2tensor(h3) if as_numpy else h3
    if model is not None:
        t = model.manifold(t)
    out = l2_normalize_rows(t)
    return tensor2np(out) if as_numpy else out


def _mel_tensor(mel: Union[MelSpectrogram, torch.Tensor, np.ndarray, Sequence[MelSpectrogram]]) -> torch.Tensor:
    if isinstance(mel, MelSpectrogram):
        return np2tensor(mel.frames)[None]
    if isinstance(mel, (list, tuple)):
        lengths = {len(m) for m in mel}
        if len(lengths) != 1:
            raise InvalidArgumentError("a mel batch needs equal lengths, got {}".format(sorted(lengths)))
        return np2tensor(np.stack([m.frames for m in mel]))
    t = np2tensor(mel)
    return t[None] if t.dim() == 2 else t


def apc_encode(mel: MelSpectrogram, model: APCModel) -> AudioFeatureSequence:
    '''
    causal encoding: the output of frame t depends only on frames <= t.
    '''
    x = _mel_tensor(mel)
    if x.shape[1] == 0:
        raise InvalidArgumentError("cannot encode an empty spectrogram")
    with torch.no_grad():
        h = project_to_manifold(model(x)[0], model)
    return AudioFeatureSequence(tensor2np(h))


def apc_loss(model: APCModel, mel_batch, prediction_offset: int = 1) -> torch.Tensor:
    '''
    mean squared error between the postnet projection of h3 at frame t and the mel frame t + offset.
    '''
    if prediction_offset < 1:
        raise InvalidArgumentError("prediction offset must be >= 1, got {}".format(prediction_offset))
    x = _mel_tensor(mel_batch)
    n = x.shape[1]
    if n < prediction_offset + 1:
        raise InvalidArgumentError("{} frames cannot be predicted {} frames ahead".format(n, prediction_offset))
    h3 = model(x[:, :n - prediction_offset])
    prediction = model.postnet(h3)
    return torch.mean((prediction - x[:, prediction_offset:]) ** 2)


def apc_train_step(model: APCModel, mel_batch, optimizer: torch.optim.Optimizer,
                   prediction_offset: int = 1) -> float:
    optimizer.zero_grad()
    loss = apc_loss(model, mel_batch, prediction_offset)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def train_apc(model: APCModel, mels: Sequence[MelSpectrogram], steps: int, lr: float = 1e-4,
              batch_size: int = 64, segment_frames: int = 240, prediction_offset: int = 1,
              seed: int = 0, progress: bool = True) -> List[float]:
    '''
    train on random equal-length crops of the given spectrograms, return the loss of every step.
    '''
    if not mels:
        raise InvalidArgumentError("no spectrograms to train on")
    segment_frames = min(segment_frames, min(len(m) for m in mels))
    rng = np.random.default_rng(seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    losses = []
    for step in tqdm(range(steps), desc="apc", disable=not progress):
        batch = []
        for i in rng.integers(0, len(mels), size=batch_size):
            start = rng.integers(0, len(mels[i]) - segment_frames + 1)
            batch.append(mels[i].frames[start:start + segment_frames])
        losses.append(apc_train_step(model, np.stack(batch), optimizer, prediction_offset))
        logger.debug("apc step %d loss %.6f", step, losses[-1])
    if losses:
        logger.info("apc training: %d steps, loss %.5f -> %.5f", steps, losses[0], losses[-1])
    return losses


def align_audio_to_video(features: Union[AudioFeatureSequence, np.ndarray], fps: int = 60,
                         audio_rate: int = AUDIO_FRAME_RATE) -> np.ndarray:
    '''
    average the audio frames covering each video frame; a trailing partial frame is dropped.
    '''
    if isinstance(features, AudioFeatureSequence):
        features = features.features
    features = np.asarray(features, dtype=np.float64)
    if fps <= 0 or audio_rate % fps != 0:
        raise InvalidArgumentError("audio rate {} is not a multiple of the video rate {}".format(audio_rate, fps))
    ratio = audio_rate // fps
    n = features.shape[0] // ratio
    return features[:n * ratio].reshape(n, ratio, -1).mean(axis=1)


def _model_digest(model: nn.Module) -> str:
    digest = hashlib.sha1()
    for key, value in model.state_dict().items():
        digest.update(key.encode())
        digest.update(value.detach().cpu().numpy().tobytes())
    return digest.hexdigest()

def encode_wav_cached(path: str, model: APCModel, cache_dir: Optional[str] = None) -> AudioFeatureSequence:
    '''
    apc_encode(compute_log_mel(read_wav(path))) with the result kept as an ADST1 file in
    cache_dir (default: $ADST_CACHE; no caching when neither is set).
    '''
    cache_dir = cache_dir or os.environ.get("ADST_CACHE")
    cache_path = None
    if cache_dir:
        try:
            with open(path, "rb") as f:
                key = hashlib.sha1(f.read()).hexdigest()
        except OSError as e:
            raise DatasetIOError("cannot read wav ({})".format(e.strerror), path) from e
        cache_path = os.path.join(cache_dir, "{}_{}.adst".format(key[:16], _model_digest(model)[:16]))
        if os.path.exists(cache_path):
            logger.debug("feature cache hit %s", cache_path)
            return AudioFeatureSequence(container.load_matrix(cache_path))

    features = apc_encode(compute_log_mel(read_wav(path)), model)
    if cache_path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        container.save_matrix(cache_path, features.features)
    return features
