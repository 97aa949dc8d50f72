'''
A synthetic style world: speaking styles as a handful of motion parameters, samples of
audio with the landmark motion (and procedural frames) it drives, and dataset file I/O.
'''
from __future__ import annotations
import json
import logging
import os
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field, ValidationError
from scipy import ndimage, signal
from scipy.spatial.transform import Rotation
from skimage.draw import polygon

from .audio import AudioClip, read_wav, write_wav
from .config import Config
from .container import load_matrix, save_matrix
from .errors import DatasetIOError, DatasetValidationError, InvalidArgumentError
from .face_model import FACE_SCALE, canonical_face, deform_face, pose_to_image
from .facialmap import EYE_INDICES, FACE_HULL_INDICES, OUTER_LIP_INDICES
from .geometry import INNER_LIP_INDICES, LandmarkSequence, canonical_rotvec, load_landmark_sequence, \
    save_landmark_sequence

logger = logging.getLogger(__name__)

SYLLABLE_RATE = 4.
NOISE_BAND = (300., 3000.)
BLINK_FRAMES = 6


class SyntheticStyle(BaseModel):
    name: str
    head_bob_freq: float = Field(gt=0.)
    head_bob_amp: float = Field(ge=0.)
    mouth_gain: float = Field(ge=0.)
    blink_period: int = Field(ge=1)
    eye_openness_bias: float = Field(0., ge=-1., le=1.)

    def vector(self) -> np.ndarray:
        return np.array([self.head_bob_freq, self.head_bob_amp, self.mouth_gain, self.blink_period,
                         self.eye_openness_bias], dtype=np.float64)


BUILTIN_STYLES: Dict[str, SyntheticStyle] = {
    "neutral": SyntheticStyle(name="neutral", head_bob_freq=0.4, head_bob_amp=3., mouth_gain=1.,
                              blink_period=180, eye_openness_bias=0.),
    "ballad": SyntheticStyle(name="ballad", head_bob_freq=0.25, head_bob_amp=6., mouth_gain=0.8,
                             blink_period=60, eye_openness_bias=-0.3),
    "rap": SyntheticStyle(name="rap", head_bob_freq=1.5, head_bob_amp=8., mouth_gain=1.6,
                          blink_period=150, eye_openness_bias=0.1),
    "opera": SyntheticStyle(name="opera", head_bob_freq=0.2, head_bob_amp=5., mouth_gain=2.4,
                            blink_period=200, eye_openness_bias=0.2),
}

# per-parameter scales of synth_style_distance
STYLE_SCALES = np.array([1., 10., 1., 100., 1.])


def get_style(name: str) -> SyntheticStyle:
    if name not in BUILTIN_STYLES:
        raise InvalidArgumentError("unknown style '{}', expected one of {}".format(name, sorted(BUILTIN_STYLES)))
    return BUILTIN_STYLES[name]


def synth_style_distance(a: SyntheticStyle, b: SyntheticStyle) -> float:
    return float(np.linalg.norm((a.vector() - b.vector()) / STYLE_SCALES))


class SyntheticSample:
    '''
    poses are T x 6 head poses (rotation vector, translation); object_landmarks are the T x 68 x 3
    object-space faces before posing (None when loaded from disk).
    '''
    def __init__(self, audio: AudioClip, landmarks: LandmarkSequence, frames: Optional[List[np.ndarray]],
                 style: SyntheticStyle, poses: np.ndarray, object_landmarks: Optional[np.ndarray] = None,
                 mouth_open: Optional[np.ndarray] = None):
        self.audio = audio
        self.landmarks = landmarks
        self.frames = frames
        self.style = style
        self.poses = np.asarray(poses, dtype=np.float64)
        self.object_landmarks = object_landmarks
        self.mouth_open = mouth_open

    def __len__(self) -> int:
        return len(self.landmarks)


def _syllable_envelope(n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sample_rate
    syllable = np.floor(t * SYLLABLE_RATE).astype(int)
    amplitude = rng.uniform(0.2, 1., syllable.max() + 1)
    # one in four syllables is a pause
    amplitude[rng.uniform(size=amplitude.size) < 0.25] = 0.
    phase = t * SYLLABLE_RATE - syllable
    return amplitude[syllable] * np.sin(np.pi * phase) ** 2


def _frame_envelope(envelope: np.ndarray, sample_rate: int, frames: int, fps: int) -> np.ndarray:
    hop = sample_rate // fps
    per_frame = envelope[:frames * hop].reshape(frames, hop).mean(axis=1)
    return ndimage.gaussian_filter1d(per_frame, sigma=1.5, mode="nearest")


def _eye_openness(style: SyntheticStyle, frames: int, rng: np.random.Generator) -> np.ndarray:
    eye = np.full(frames, 1. + 0.3 * style.eye_openness_bias)
    start = int(rng.integers(0, style.blink_period))
    shape = 1. - np.sin(np.pi * (np.arange(BLINK_FRAMES) + 0.5) / BLINK_FRAMES) * 0.95
    for first in range(start, frames, style.blink_period):
        span = slice(first, min(first + BLINK_FRAMES, frames))
        eye[span] = eye[span] * shape[:span.stop - span.start]
    return eye


def _head_poses(style: SyntheticStyle, frames: int, fps: int, image_size: int,
                rng: np.random.Generator) -> np.ndarray:
    t = np.arange(frames) / fps
    phase = rng.uniform(0., 2. * np.pi)
    omega = 2. * np.pi * style.head_bob_freq
    yaw = style.head_bob_amp * np.sin(omega * t + phase)
    pitch = 0.25 * style.head_bob_amp * np.sin(2. * omega * t + phase)
    rotvec = Rotation.from_euler("yxz", np.stack([yaw, pitch, np.zeros(frames)], axis=1), degrees=True).as_rotvec()
    rotvec = np.stack([canonical_rotvec(r) for r in rotvec])
    px = image_size / 512.
    trans = np.stack([4. * px * np.sin(omega * t + phase), 2. * px * np.sin(2. * omega * t + phase),
                      np.zeros(frames)], axis=1)
    return np.concatenate([rotvec, trans], axis=1)


def synth_generate(style: SyntheticStyle, duration_s: float, seed: int, render: bool = True,
                   image_size: int = None, sample_rate: int = None, fps: int = None) -> SyntheticSample:
    '''
    band-limited noise shaped by syllables drives the mouth (mouth_gain x smoothed envelope);
    the head yaws at head_bob_freq with head_bob_amp degrees and the eyes blink every blink_period frames.
    '''
    if duration_s < 1.:
        raise InvalidArgumentError("a synthetic sample lasts >= 1 s, got {}".format(duration_s))
    image_size = Config.image_size if image_size is None else image_size
    sample_rate = Config.sample_rate if sample_rate is None else sample_rate
    fps = Config.fps if fps is None else fps
    rng = np.random.default_rng(seed)

    n = int(round(duration_s * sample_rate))
    sos = signal.butter(4, NOISE_BAND, btype="bandpass", fs=sample_rate, output="sos")
    noise = signal.sosfiltfilt(sos, rng.standard_normal(n))
    noise /= np.std(noise)
    envelope = _syllable_envelope(n, sample_rate, rng)
    audio = AudioClip(np.clip(0.3 * noise * envelope, -1., 1.), sample_rate)

    frames = int(np.floor(n / sample_rate * fps))
    mouth = style.mouth_gain * _frame_envelope(envelope, sample_rate, frames, fps)
    eye = _eye_openness(style, frames, rng)
    poses = _head_poses(style, frames, fps, image_size, rng)

    rest = canonical_face()
    scale = FACE_SCALE * image_size / 512.
    center = np.array([image_size / 2., image_size / 2., 0.])
    objects = np.stack([deform_face(rest, mouth[t], eye[t]) for t in range(frames)])
    points = np.stack([pose_to_image(objects[t], poses[t, :3], poses[t, 3:], scale, center) for t in range(frames)])
    landmarks = LandmarkSequence(points, fps, (image_size, image_size))

    images = [render_face(points[t], image_size) for t in range(frames)] if render else None
    logger.debug("synthesized %d frames of style '%s' (seed %d)", frames, style.name, seed)
    return SyntheticSample(audio, landmarks, images, style, poses, objects, mouth)


BACKGROUND = (40, 44, 52)
SKIN = (224, 182, 150)
EYE = (250, 250, 245)
LIPS = (170, 64, 70)
MOUTH_INSIDE = (50, 16, 20)


def render_face(landmarks: np.ndarray, image_size: int = None) -> np.ndarray:
    '''
    flat-shaded procedural face: face hull, eyes, lips and the open mouth over a flat background.
    '''
    image_size = Config.image_size if image_size is None else image_size
    xy = np.asarray(landmarks, dtype=np.float64)[:, :2]
    image = np.empty((image_size, image_size, 3), dtype=np.uint8)
    image[:] = BACKGROUND
    layers = [(FACE_HULL_INDICES, SKIN)] + [(eye, EYE) for eye in EYE_INDICES] + \
             [(OUTER_LIP_INDICES, LIPS), (INNER_LIP_INDICES, MOUTH_INSIDE)]
    for indices, color in layers:
        rr, cc = polygon(xy[indices, 1], xy[indices, 0], shape=image.shape[:2])
        image[rr, cc] = color
    return image


def save_dataset(directory: str, samples: Sequence[SyntheticSample], name: str = "manifest.json") -> str:
    '''
    write WAVs, JSONL landmarks, PNG frames and ADST1 poses plus a manifest; returns the manifest path.
    '''
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        stem = "sample_{:03d}".format(i)
        entry = {"audio": stem + ".wav", "landmarks": stem + ".jsonl", "poses": stem + "_poses.adst",
                 "frames_dir": None, "style": sample.style.name, "style_params": sample.style.model_dump()}
        write_wav(os.path.join(directory, entry["audio"]), sample.audio)
        save_landmark_sequence(os.path.join(directory, entry["landmarks"]), sample.landmarks)
        save_matrix(os.path.join(directory, entry["poses"]), sample.poses)
        if sample.frames is not None:
            entry["frames_dir"] = stem + "_frames"
            frames_dir = os.path.join(directory, entry["frames_dir"])
            os.makedirs(frames_dir, exist_ok=True)
            for t, frame in enumerate(sample.frames):
                save_png(os.path.join(frames_dir, "{:05d}.png".format(t)), frame)
        entries.append(entry)

    path = os.path.join(directory, name)
    try:
        with open(path, "w") as f:
            json.dump(entries, f, indent=1)
    except OSError as e:
        raise DatasetIOError("cannot write manifest ({})".format(e.strerror), path) from e
    logger.info("wrote %d samples to %s", len(entries), path)
    return path


def save_png(path: str, image: np.ndarray) -> None:
    try:
        Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)
    except OSError as e:
        raise DatasetIOError("cannot write PNG ({})".format(e), path) from e

def load_png(path: str) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB"))
    except OSError as e:
        raise DatasetIOError("cannot read PNG ({})".format(e), path) from e


def load_frames(frames_dir: str) -> List[np.ndarray]:
    if not os.path.isdir(frames_dir):
        raise DatasetIOError("frame directory does not exist", frames_dir)
    names = sorted(name for name in os.listdir(frames_dir) if name.endswith(".png"))
    return [load_png(os.path.join(frames_dir, name)) for name in names]


def _entry_style(entry: Dict, manifest_path: str) -> SyntheticStyle:
    try:
        if entry.get("style_params") is not None:
            return SyntheticStyle(**entry["style_params"])
        return get_style(entry["style"])
    except (ValidationError, InvalidArgumentError, KeyError, TypeError) as e:
        raise DatasetValidationError("{}: invalid style in entry {} ({})".format(manifest_path, entry, e)) from e


def load_dataset(manifest_path: str) -> Iterator[SyntheticSample]:
    '''
    stream the samples of a manifest in manifest order, validating every file.
    '''
    try:
        with open(manifest_path, "r") as f:
            entries = json.load(f)
    except OSError as e:
        raise DatasetIOError("cannot read manifest ({})".format(e.strerror), manifest_path) from e
    except ValueError as e:
        raise DatasetIOError("corrupt manifest ({})".format(e), manifest_path) from e
    if not isinstance(entries, list):
        raise DatasetValidationError("{}: a manifest is a JSON list".format(manifest_path))
    return _iterate_dataset(manifest_path, entries)


def _iterate_dataset(manifest_path: str, entries: List[Dict]) -> Iterator[SyntheticSample]:
    root = os.path.dirname(os.path.abspath(manifest_path))
    for entry in entries:
        if not isinstance(entry, dict) or "audio" not in entry or "landmarks" not in entry:
            raise DatasetValidationError("{}: entry {} lacks audio or landmarks".format(manifest_path, entry))
        style = _entry_style(entry, manifest_path)
        audio_path = os.path.join(root, entry["audio"])
        landmark_path = os.path.join(root, entry["landmarks"])
        audio = read_wav(audio_path)
        landmarks = load_landmark_sequence(landmark_path)

        expected = int(np.floor(audio.samples.size / audio.sample_rate * landmarks.fps))
        if len(landmarks) != expected:
            raise DatasetValidationError("{}: {} landmark frames, the audio covers {}".format(
                landmark_path, len(landmarks), expected))

        poses = np.zeros((len(landmarks), 6))
        if entry.get("poses"):
            pose_path = os.path.join(root, entry["poses"])
            poses = load_matrix(pose_path)
            if poses.shape != (len(landmarks), 6):
                raise DatasetValidationError("{}: poses have shape {}, expected ({}, 6)".format(
                    pose_path, poses.shape, len(landmarks)))

        frames = None
        if entry.get("frames_dir"):
            frames_dir = os.path.join(root, entry["frames_dir"])
            frames = load_frames(frames_dir)
            if len(frames) != len(landmarks):
                raise DatasetValidationError("{}: {} frames for {} landmark frames".format(
                    frames_dir, len(frames), len(landmarks)))
        yield SyntheticSample(audio, landmarks, frames, style, poses)
