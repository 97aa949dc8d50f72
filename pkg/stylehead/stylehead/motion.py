'''
Audio-driven intermediate motion.

Mouth and eye vertices follow a 3-layer LSTM with an 18-frame look-ahead;
head and torso follow a diagonal Gaussian over the 6-D pose x_t conditioned
on the last 256 poses and the stream feature h_t.
'''
from __future__ import annotations
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from .config import Config
from .errors import InvalidArgumentError
from .face_model import canonical_face, me_indices, pose_to_image
from .geometry import HeadPose, canonical_rotvec
from .tensor_util import _U_, np2tensor, tensor2np

logger = logging.getLogger(__name__)

DELAY_FRAMES = 18
HISTORY_LENGTH = 256
POSE_DIM = 6
STD_FLOOR = 1e-4


class DisplacementSequence:
    '''
    T x K_me x 3 displacements of the mouth/eye vertices from the rest face, object coordinates.
    '''
    def __init__(self, deltas):
        if isinstance(deltas, torch.Tensor):
            deltas = tensor2np(deltas)
        deltas = np.asarray(deltas, dtype=np.float64)
        if deltas.ndim != 3 or deltas.shape[2] != 3:
            raise InvalidArgumentError("displacements have shape (T, K_me, 3), got {}".format(deltas.shape))
        if not np.all(np.isfinite(deltas)):
            raise InvalidArgumentError("displacements must be finite")
        self.deltas = deltas

    def __len__(self) -> int:
        return self.deltas.shape[0]

    @property
    def k_me(self) -> int:
        return self.deltas.shape[1]


class PoseHistory:
    '''
    the 256 most recent poses x_{t-256} ... x_{t-1}, oldest first.
    '''
    def __init__(self, poses):
        poses = np.asarray(poses, dtype=np.float64)
        if poses.shape != (HISTORY_LENGTH, POSE_DIM):
            raise InvalidArgumentError("a pose history has shape (256, 6), got {}".format(poses.shape))
        if not np.all(np.isfinite(poses)):
            raise InvalidArgumentError("pose history must be finite")
        self.poses = poses

    @staticmethod
    def rest(initial: Optional[np.ndarray] = None) -> PoseHistory:
        initial = np.zeros(POSE_DIM) if initial is None else np.asarray(initial, dtype=np.float64)
        return PoseHistory(np.tile(initial, (HISTORY_LENGTH, 1)))

    def append(self, pose) -> PoseHistory:
        pose = np.asarray(pose, dtype=np.float64).reshape(1, POSE_DIM)
        return PoseHistory(np.concatenate([self.poses[1:], pose]))


class GaussianPrediction:
    '''
    mean mu_x and (diagonal) standard deviation of the next pose; tensors keep their graph.
    '''
    def __init__(self, mean, std):
        self.mean = np2tensor(mean) if not isinstance(mean, torch.Tensor) else mean
        self.std = np2tensor(std) if not isinstance(std, torch.Tensor) else std
        if self.mean.shape[-1] != POSE_DIM or self.std.shape != self.mean.shape:
            raise InvalidArgumentError("a pose prediction has matching (..., 6) mean and std")


def std_activation(raw: torch.Tensor) -> torch.Tensor:
    return F.softplus(raw) + STD_FLOOR


class MouthEyeNet(nn.Module):
    '''
    3 stacked LSTMs (256 units) followed by MLP layers of 256, 512 and 3 * K_me neurons.
    '''
    def __init__(self, feature_dim: int = 512, hidden: int = 256, k_me: int = 25,
                 delay: int = DELAY_FRAMES, mlp: Tuple[int, int] = (256, 512)):
        super().__init__()
        self.k_me = k_me
        self.delay = delay
        self.lstm = nn.LSTM(feature_dim, hidden, num_layers=3, batch_first=True)
        self.mlp = nn.Sequential(
            nn.Linear(hidden, mlp[0]), nn.ReLU(),
            nn.Linear(mlp[0], mlp[1]), nn.ReLU(),
            nn.Linear(mlp[1], 3 * k_me))
        self.to(device=Config.device, dtype=Config.dtype)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        '''
        features B x T x D -> displacements B x T x K_me x 3; frame t sees features up to t + delay.
        '''
        b, t, _ = features.shape
        tail = features[:, -1:].expand(b, self.delay, features.shape[2])
        out, _ = self.lstm(torch.cat([features, tail], dim=1))
        return self.mlp(out[:, self.delay:]).reshape(b, t, self.k_me, 3)


class HeadPoseNet(nn.Module):
    '''
    one GRU (256 units) over the pose history, concatenated with h_t, then mean and std heads.
    '''
    def __init__(self, feature_dim: int = 512, hidden: int = 256):
        super().__init__()
        self.gru = nn.GRU(POSE_DIM, hidden, batch_first=True)
        self.mean_head = nn.Sequential(nn.Linear(hidden + feature_dim, hidden), nn.ReLU(), nn.Linear(hidden, POSE_DIM))
        self.std_head = nn.Sequential(nn.Linear(hidden + feature_dim, hidden), nn.ReLU(), nn.Linear(hidden, POSE_DIM))
        self.to(device=Config.device, dtype=Config.dtype)

    def forward(self, history: torch.Tensor, h_t: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        '''
        history B x 256 x 6, h_t B x D -> (mean, raw std) each B x 6
        '''
        _, last = self.gru(history)
        z = torch.cat([last[-1], h_t], dim=-1)
        return self.mean_head(z), self.std_head(z)


class MotionGenerator(nn.Module):
    def __init__(self, feature_dim: int = 512, hidden: int = 256, k_me: int = 25,
                 pose_hidden: int = 256, mlp: Tuple[int, int] = (256, 512)):
        super().__init__()
        self.feature_dim = feature_dim
        self.k_me = k_me
        self.mouth_eye = MouthEyeNet(feature_dim, hidden, k_me, mlp=mlp)
        self.head_pose = HeadPoseNet(feature_dim, pose_hidden)


def _features_tensor(features) -> torch.Tensor:
    if hasattr(features, "features"):
        features = features.features
    t = np2tensor(features) if not isinstance(features, torch.Tensor) else features
    return t[None] if t.dim() == 2 else t


def mouth_eye_forward(features, model: Union[MouthEyeNet, MotionGenerator]) -> DisplacementSequence:
    if isinstance(model, MotionGenerator):
        model = model.mouth_eye
    x = _features_tensor(features)
    if x.shape[1] <= model.delay:
        raise InvalidArgumentError("{} frames do not cover the {}-frame delay".format(x.shape[1], model.delay))
    with torch.no_grad():
        deltas = model(x)[0]
    return DisplacementSequence(deltas)


def loss_me(truth, pred) -> torch.Tensor:
    '''
    sum over frames of the squared Frobenius norm of the displacement error.
    '''
    truth = truth.deltas if isinstance(truth, DisplacementSequence) else truth
    pred = pred.deltas if isinstance(pred, DisplacementSequence) else pred
    truth = np2tensor(truth) if not isinstance(truth, torch.Tensor) else truth
    pred = np2tensor(pred) if not isinstance(pred, torch.Tensor) else pred
    if truth.shape != pred.shape:
        raise InvalidArgumentError("displacement shapes differ: {} vs {}".format(tuple(truth.shape), tuple(pred.shape)))
    return ((truth - pred) ** 2).sum()


def head_pose_predict(history: PoseHistory, h_t, model: Union[HeadPoseNet, MotionGenerator]) -> GaussianPrediction:
    if isinstance(model, MotionGenerator):
        model = model.head_pose
    poses = history.poses if isinstance(history, PoseHistory) else history
    poses = np2tensor(poses) if not isinstance(poses, torch.Tensor) else poses
    if not bool(torch.isfinite(poses).all()):
        raise InvalidArgumentError("pose history must be finite")
    h_t = np2tensor(h_t) if not isinstance(h_t, torch.Tensor) else h_t
    if poses.dim() == 2:
        mean, raw = model(poses[None], h_t.reshape(1, -1))
        return GaussianPrediction(mean[0], std_activation(raw[0]))
    mean, raw = model(poses, h_t)
    return GaussianPrediction(mean, std_activation(raw))


def loss_ht(x_t, pred: GaussianPrediction) -> torch.Tensor:
    '''
    negative log-likelihood of x_t under N(mu_x, diag(std^2)), summed over the 6 dimensions
    (and over any leading batch dimensions).
    '''
    x_t = np2tensor(x_t) if not isinstance(x_t, torch.Tensor) else x_t
    std = pred.std
    if not bool((std > 0).all()):
        raise InvalidArgumentError("standard deviations must be positive")
    return (0.5 * torch.log(2 * np.pi * std ** 2) + (x_t - pred.mean) ** 2 / (2 * std ** 2)).sum()


def head_pose_sample(pred: GaussianPrediction, rng: np.random.Generator) -> HeadPose:
    mean = tensor2np(pred.mean).reshape(POSE_DIM)
    std = tensor2np(pred.std).reshape(POSE_DIM)
    x = mean + std * rng.standard_normal(POSE_DIM)
    return HeadPose(canonical_rotvec(x[:3]), x[3:])


def rollout_head_pose(history: PoseHistory, features, model: Union[HeadPoseNet, MotionGenerator],
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    '''
    autoregressive rollout over the L given feature frames, returns L x 6 poses.
    rng None takes the predicted means instead of sampling.
    '''
    features = _features_tensor(features)[0]
    poses = []
    with torch.no_grad():
        for t in range(features.shape[0]):
            pred = head_pose_predict(history, features[t], model)
            if rng is None:
                x = tensor2np(pred.mean)
            else:
                x = head_pose_sample(pred, rng).as_vector()
            poses.append(x)
            history = history.append(x)
    return np.stack(poses) if poses else np.zeros((0, POSE_DIM))


def loss_mg(me, ht):
    return me + ht


def observed_histories(poses: torch.Tensor) -> torch.Tensor:
    '''
    ground-truth poses T x 6 -> T x 256 x 6 histories, padded at the start with the first pose.
    '''
    t = poses.shape[0]
    padded = torch.cat([poses[:1].expand(HISTORY_LENGTH, POSE_DIM), poses], dim=0)
    index = torch.arange(t, device=poses.device)[:, None] + torch.arange(HISTORY_LENGTH, device=poses.device)[None]
    return padded[index]


def displacements_from_landmarks(object_landmarks, k_me: int = 25, rest: np.ndarray = None) -> DisplacementSequence:
    '''
    object-space landmarks T x 68 x 3 -> displacements of the mouth/eye vertices from the rest face.
    '''
    rest = canonical_face() if rest is None else rest
    index = me_indices(k_me)
    object_landmarks = np.asarray(object_landmarks, dtype=np.float64)
    return DisplacementSequence(object_landmarks[:, index] - rest[index][None])


def compose_landmarks(deltas: torch.Tensor, poses: torch.Tensor, k_me: int = 25,
                      rest: np.ndarray = None) -> torch.Tensor:
    '''
    rest face + displacements, placed by the head poses: T x K_me x 3, T x 6 -> T x 68 x 3 image landmarks.
    '''
    rest = canonical_face() if rest is None else rest
    index = me_indices(k_me)
    obj = _U_(torch.as_tensor, rest).expand(deltas.shape[0], -1, -1).clone()
    obj[:, index] = obj[:, index] + deltas
    return pose_to_image(obj, poses[:, :3], poses[:, 3:])


def motion_losses(model: MotionGenerator, features: torch.Tensor, deltas: torch.Tensor,
                  poses: torch.Tensor, pose_frames: int = 32, generator: Optional[torch.Generator] = None):
    '''
    (L_me, L_ht) of one sequence: features T x D, deltas T x K_me x 3, poses T x 6.
    L_me is summed over frames; L_ht is averaged over pose_frames sampled frames (conditioned on the observed history).
    '''
    pred = model.mouth_eye(features[None])[0]
    l_me = loss_me(deltas, pred)

    t = poses.shape[0]
    frames = torch.randperm(t, generator=generator)[:min(pose_frames, t)]
    histories = observed_histories(poses)[frames]
    pose_pred = head_pose_predict(histories, features[frames], model)
    l_ht = loss_ht(poses[frames], pose_pred) / len(frames)
    return l_me, l_ht


def motion_train_step(model: MotionGenerator, batch: Sequence[Tuple], optimizer: torch.optim.Optimizer,
                      generator: Optional[torch.Generator] = None) -> float:
    '''
    one update on L_mg = L_me + L_ht averaged over the (features, deltas, poses) sequences of batch.
    '''
    optimizer.zero_grad()
    total = 0.
    for features, deltas, poses in batch:
        l_me, l_ht = motion_losses(model, np2tensor(features), np2tensor(deltas), np2tensor(poses),
                                   generator=generator)
        total = total + loss_mg(l_me, l_ht)
    total = total / len(batch)
    total.backward()
    optimizer.step()
    return float(total.detach())


def train_motion(model: MotionGenerator, sequences: Sequence[Tuple], steps: int, lr: float = 1e-4,
                 batch_size: int = 64, seed: int = 0, progress: bool = True) -> List[float]:
    '''
    sequences: (features T x D, displacements T x K_me x 3, poses T x 6) triples at the video frame rate.
    '''
    if not sequences:
        raise InvalidArgumentError("no motion sequences to train on")
    rng = np.random.default_rng(seed)
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    losses = []
    for step in tqdm(range(steps), desc="motion", disable=not progress):
        picks = rng.integers(0, len(sequences), size=min(batch_size, len(sequences)))
        losses.append(motion_train_step(model, [sequences[i] for i in picks], optimizer, generator))
        logger.debug("motion step %d L_mg %.6f", step, losses[-1])
    if losses:
        logger.info("motion training: %d steps, L_mg %.5f -> %.5f", steps, losses[0], losses[-1])
    return losses
