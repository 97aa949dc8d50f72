'''
Style transfer by fine-tuning: the style transfer network f, its constraint and
gradient-penalty losses, and the two-phase fine-tuning loop of the motion generator.
'''
from __future__ import annotations
import json
import logging
from typing import Callable, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
from pydantic import BaseModel, Field, model_validator
from tqdm import tqdm

from .audio import (AUDIO_FRAME_RATE, APCModel, AudioClip, align_audio_to_video, apc_encode, compute_log_mel,
                    project_to_manifold)
from .config import Config
from .errors import DatasetIOError, InvalidArgumentError, PreconditionError
from .face_model import estimate_head_pose
from .geometry import NUM_LANDMARKS, LandmarkSequence
from .motion import (DELAY_FRAMES, MotionGenerator, compose_landmarks, displacements_from_landmarks,
                     head_pose_predict, loss_ht, loss_me, loss_mg, observed_histories)
from .tensor_util import np2tensor

logger = logging.getLogger(__name__)

LANDMARK_DIM = NUM_LANDMARKS * 3
STYLE_DIM = 256


class StyleTransferNet(nn.Module):
    '''
    f: 204-d landmark vector -> 256-d mean style features (MLP 1024, 512, 256).
    Inputs are shifted and scaled from canvas pixels by fixed constants.
    '''
    def __init__(self, hidden: Sequence[int] = (1024, 512, 256), image_size: int = None):
        super().__init__()
        image_size = Config.image_size if image_size is None else image_size
        if hidden[-1] != STYLE_DIM:
            raise InvalidArgumentError("the last style layer has {} neurons".format(STYLE_DIM))
        layers = []
        previous = LANDMARK_DIM
        for i, width in enumerate(hidden):
            layers.append(nn.Linear(previous, width))
            if i < len(hidden) - 1:
                layers.append(nn.ReLU())
            previous = width
        self.mlp = nn.Sequential(*layers)
        self.register_buffer("shift", torch.tensor(image_size / 2.))
        self.register_buffer("scale", torch.tensor(image_size / 4.))
        self.to(device=Config.device, dtype=Config.dtype)

    def forward(self, phi: torch.Tensor) -> torch.Tensor:
        return self.mlp((phi - self.shift) / self.scale)


class TransferConfig(BaseModel):
    gamma_mode: Literal["fixed", "uniform-random"] = "uniform-random"
    gamma: float = Field(0.5, ge=0., le=1.)
    epochs: int = Field(6, ge=1)
    phase1_epochs: int = Field(1, ge=1)
    steps_per_epoch: int = Field(20, ge=1)
    lr_phase1: float = Field(1e-3, gt=0.)
    lr_phase2: float = Field(1e-7, gt=0.)
    scheduler: Literal["cosine-annealing"] = "cosine-annealing"
    eta_min: float = Field(0., ge=0.)
    seed: int = 0
    style_name: str = "custom"

    @model_validator(mode="after")
    def _phases_fit(self) -> TransferConfig:
        if self.phase1_epochs > self.epochs:
            raise ValueError("phase1_epochs ({}) exceeds epochs ({})".format(self.phase1_epochs, self.epochs))
        if self.eta_min > min(self.lr_phase1, self.lr_phase2):
            raise ValueError("eta_min must not exceed the phase learning rates")
        return self


def _phi_tensor(phi) -> torch.Tensor:
    if isinstance(phi, LandmarkSequence):
        phi = phi.vectors()
    t = np2tensor(phi)
    if t.shape[-1] != LANDMARK_DIM:
        raise InvalidArgumentError("landmark vectors have {} entries, got {}".format(LANDMARK_DIM, t.shape[-1]))
    return t


def style_features(phi, f: Callable) -> torch.Tensor:
    phi = _phi_tensor(phi)
    # examination
    if Config.para_check and not bool(torch.isfinite(phi).all()):
        raise InvalidArgumentError("landmark vectors must be finite")
    # examination done
    return f(phi)


def loss_constraint(phi_mg, phi_s, f: Callable) -> torch.Tensor:
    '''
    ||f(phi_mg) - f(phi_s)||^2, averaged over frames when given N x 204 batches.
    '''
    diff = style_features(phi_mg, f) - style_features(phi_s, f)
    per_frame = (diff ** 2).sum(dim=-1)
    return per_frame.mean() if per_frame.dim() else per_frame


def interpolate(phi_s, phi_mg, gamma: Union[float, torch.Tensor]):
    '''
    gamma * phi_s + (1 - gamma) * phi_mg; gamma may be a per-row tensor.
    '''
    # examination
    g = torch.as_tensor(gamma) if not isinstance(gamma, torch.Tensor) else gamma
    if bool(((g < 0.) | (g > 1.)).any()) or not bool(torch.isfinite(g).all()):
        raise InvalidArgumentError("gamma must lie in [0, 1], got {}".format(gamma))
    # examination done
    if isinstance(phi_s, np.ndarray) and isinstance(phi_mg, np.ndarray) and not isinstance(gamma, torch.Tensor):
        return gamma * phi_s + (1. - gamma) * phi_mg
    phi_s, phi_mg = _phi_tensor(phi_s), _phi_tensor(phi_mg)
    if isinstance(gamma, torch.Tensor) and gamma.dim() == 1:
        gamma = gamma[:, None]
    return gamma * phi_s + (1. - gamma) * phi_mg


def gradient_norm(phi_hat, f: Callable, create_graph: bool = False) -> torch.Tensor:
    '''
    per-row norm of the gradient of mean(f(phi_hat)) with respect to phi_hat.
    '''
    x = _phi_tensor(phi_hat).detach().requires_grad_(True)
    out = f(x)
    scalar = out.mean(dim=-1).sum()
    if not scalar.requires_grad:
        return torch.zeros(x.shape[:-1], dtype=x.dtype, device=x.device)
    grad, = torch.autograd.grad(scalar, x, create_graph=create_graph, allow_unused=True)
    if grad is None:
        return torch.zeros(x.shape[:-1], dtype=x.dtype, device=x.device)
    return grad.norm(dim=-1)


def loss_regularizer(phi_hat, f: Callable) -> torch.Tensor:
    '''
    (||grad mean f(phi_hat)|| - 1)^2, averaged over rows; differentiable in the weights of f.
    '''
    penalty = (gradient_norm(phi_hat, f, create_graph=True) - 1.) ** 2
    return penalty.mean() if penalty.dim() else penalty


def loss_transfer(l_mg, l_sc, l_r):
    return l_mg + l_sc + l_r


class TransferModels:
    '''
    the pretrained pipeline parts the transfer loop needs; the image generator is carried untouched.
    '''
    def __init__(self, apc: Optional[APCModel] = None, motion: Optional[MotionGenerator] = None,
                 style_net: Optional[StyleTransferNet] = None, generator: Optional[nn.Module] = None):
        self.apc = apc
        self.motion = motion
        self.style_net = style_net
        self.generator = generator

    def require(self) -> None:
        missing = [name for name in ("apc", "motion", "style_net") if getattr(self, name) is None]
        if missing:
            raise PreconditionError("style transfer needs pretrained weights for: {}".format(", ".join(missing)))


class TransferResult:
    def __init__(self, motion: MotionGenerator, style_net: StyleTransferNet, history: List[Dict]):
        self.motion = motion
        self.style_net = style_net
        self.history = history


class _TransferTargets:
    '''
    per-frame training material from the reference video and the audio:
    features T x D, displacements T x K_me x 3, poses T x 6 and phi_s T x 204.
    '''
    def __init__(self, reference: LandmarkSequence, audio: AudioClip, models: TransferModels):
        mel = compute_log_mel(audio)
        with torch.no_grad():
            h = apc_encode(mel, models.apc)
        features = align_audio_to_video(h, fps=reference.fps)
        self.mel = np2tensor(mel.frames)[None]
        self.audio_per_video = AUDIO_FRAME_RATE // reference.fps
        frames = min(len(features), len(reference))
        if frames <= DELAY_FRAMES:
            raise InvalidArgumentError("style transfer needs more than {} aligned frames, got {}".format(
                DELAY_FRAMES, frames))

        poses, objects = [], []
        for t in range(frames):
            pose, obj = estimate_head_pose(reference.points[t])
            poses.append(pose.as_vector())
            objects.append(obj)
        k_me = models.motion.mouth_eye.k_me
        self.k_me = k_me
        self.features = np2tensor(np.asarray(features)[:frames])
        self.deltas = np2tensor(displacements_from_landmarks(np.stack(objects), k_me).deltas)
        self.poses = np2tensor(np.stack(poses))
        self.histories = observed_histories(self.poses)
        self.phi_s = np2tensor(reference.vectors()[:frames])

    def __len__(self) -> int:
        return self.features.shape[0]


def _live_features(models: TransferModels, targets: _TransferTargets) -> torch.Tensor:
    '''
    the aligned audio features, re-encoded with gradients while the APC encoder is being trained.
    '''
    if not any(p.requires_grad for p in models.apc.parameters()):
        return targets.features
    frames, ratio = len(targets), targets.audio_per_video
    h = project_to_manifold(models.apc(targets.mel)[0], models.apc)
    return h[:frames * ratio].reshape(frames, ratio, -1).mean(dim=1)


def transfer_losses(models: TransferModels, targets: _TransferTargets, gamma) -> Dict[str, torch.Tensor]:
    '''
    L_mg (per-frame means of L_me and L_ht), L_sc and L_r of one fine-tuning step.
    '''
    motion, f = models.motion, models.style_net
    frames = len(targets)
    features = _live_features(models, targets)
    pred = motion.mouth_eye(features[None])[0]
    l_me = loss_me(targets.deltas, pred) / frames
    pose_pred = head_pose_predict(targets.histories, features, motion)
    l_ht = loss_ht(targets.poses, pose_pred) / frames

    phi_mg = compose_landmarks(pred, pose_pred.mean, targets.k_me).reshape(frames, -1)
    l_sc = loss_constraint(phi_mg, targets.phi_s, f)
    phi_hat = interpolate(targets.phi_s, phi_mg.detach(), gamma)
    l_r = loss_regularizer(phi_hat, f)
    l_mg = loss_mg(l_me, l_ht)
    return {"l_mg": l_mg, "l_sc": l_sc, "l_r": l_r, "total": loss_transfer(l_mg, l_sc, l_r)}


def _set_trainable(module: nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)

def _trainable_flags(modules: Sequence[Optional[nn.Module]]) -> List:
    return [(p, p.requires_grad) for m in modules if m is not None for p in m.parameters()]


def run_transfer(reference_landmarks: Union[LandmarkSequence, Sequence], audio: AudioClip,
                 models: TransferModels, cfg: TransferConfig = None, progress: bool = True) -> TransferResult:
    '''
    fine-tune the motion generator towards the style of the reference video.
    Phase 1 trains only f at lr_phase1; phase 2 trains f, the motion generator and the APC encoder at
    lr_phase2. Each phase follows its own cosine-annealing schedule. The image generator takes no part
    in L_transfer and stays frozen. Every parameter gets its requires_grad flag back on return.
    '''
    cfg = TransferConfig() if cfg is None else cfg
    models.require()
    reference = reference_landmarks if isinstance(reference_landmarks, LandmarkSequence) \
        else LandmarkSequence(np.stack([np.asarray(getattr(lm, "points", lm)) for lm in reference_landmarks]))

    saved_flags = _trainable_flags([models.apc, models.motion, models.style_net, models.generator])
    try:
        _set_trainable(models.apc, False)
        if models.generator is not None:
            _set_trainable(models.generator, False)
        targets = _TransferTargets(reference, audio, models)
        torch_gen = torch.Generator().manual_seed(cfg.seed)

        history: List[Dict] = []
        phases = [("freeze", cfg.phase1_epochs, cfg.lr_phase1, False)]
        if cfg.epochs > cfg.phase1_epochs:
            phases.append(("joint", cfg.epochs - cfg.phase1_epochs, cfg.lr_phase2, True))

        epoch = 0
        for phase, epochs, lr, joint in phases:
            _set_trainable(models.motion, joint)
            _set_trainable(models.apc, joint)
            _set_trainable(models.style_net, True)
            params = list(models.style_net.parameters())
            if joint:
                params += list(models.motion.parameters()) + list(models.apc.parameters())
            optimizer = torch.optim.Adam(params, lr=lr)
            steps = epochs * cfg.steps_per_epoch
            scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=steps, eta_min=cfg.eta_min)

            bar = tqdm(range(steps), desc="transfer/" + phase, disable=not progress)
            for step in bar:
                if cfg.gamma_mode == "fixed":
                    gamma = cfg.gamma
                else:
                    gamma = float(torch.rand((), generator=torch_gen, dtype=torch.float64))
                optimizer.zero_grad()
                losses = transfer_losses(models, targets, gamma)
                losses["total"].backward()
                optimizer.step()
                scheduler.step()

                record = {name: float(value.detach()) for name, value in losses.items()}
                record.update(phase=phase, epoch=epoch + step // cfg.steps_per_epoch + 1, step=step,
                              gamma=gamma, lr=optimizer.param_groups[0]["lr"])
                history.append(record)
                bar.set_postfix(total=record["total"])
                logger.debug("transfer %s step %d: %s", phase, step, record)
            epoch += epochs
            logger.info("transfer phase '%s' done: total=%.5g, l_sc=%.5g", phase, history[-1]["total"],
                        history[-1]["l_sc"])
    finally:
        for p, flag in saved_flags:
            p.requires_grad_(flag)
    return TransferResult(models.motion, models.style_net, history)


def pretrain_style_net(style_net: StyleTransferNet, pairs: Sequence, steps: int, lr: float = 1e-4,
                       batch_size: int = 64, seed: int = 0, progress: bool = True) -> List[float]:
    '''
    pretrain f with L_sc + L_r on same-style landmark pairs (two N x 204 arrays per entry).
    '''
    if not pairs:
        raise InvalidArgumentError("style pretraining needs at least one pair")
    a = torch.cat([_phi_tensor(p[0]) for p in pairs])
    b = torch.cat([_phi_tensor(p[1]) for p in pairs])
    if a.shape != b.shape:
        raise InvalidArgumentError("paired landmark sets differ in shape: {} vs {}".format(
            tuple(a.shape), tuple(b.shape)))
    gen = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.Adam(style_net.parameters(), lr=lr)
    losses = []
    for _ in tqdm(range(steps), desc="style-net", disable=not progress):
        index = torch.randint(0, a.shape[0], (min(batch_size, a.shape[0]),), generator=gen)
        gamma = torch.rand(len(index), generator=gen, dtype=torch.float64).to(a.dtype)
        optimizer.zero_grad()
        phi_hat = interpolate(b[index], a[index], gamma)
        loss = loss_constraint(a[index], b[index], style_net) + loss_regularizer(phi_hat, style_net)
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
    logger.info("style net pretrained for %d steps, final loss %.5g", steps, losses[-1] if losses else float("nan"))
    return losses


def write_transfer_manifest(path: str, cfg: TransferConfig, reference_landmark_file: str, audio_file: str) -> None:
    manifest = {
        "style_name": cfg.style_name,
        "reference_landmark_file": reference_landmark_file,
        "audio_file": audio_file,
        "epochs": cfg.epochs,
        "gamma_mode": cfg.gamma_mode,
        "seed": cfg.seed,
    }
    try:
        with open(path, "w") as f:
            json.dump(manifest, f, indent=2)
    except OSError as e:
        raise DatasetIOError("cannot write transfer manifest ({})".format(e.strerror), path) from e
