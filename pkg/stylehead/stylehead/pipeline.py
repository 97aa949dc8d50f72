'''
The stages of the command line front end, one function per subcommand.

Training stages write their weights into a checkpoint directory:
    apc.adst, motion.adst, style_net.adst, stylemap.adst, generator.adst
and build-isp adds isp/isp_<k>.png with isp/references.json.
'''
from __future__ import annotations
import json
import logging
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from .audio import APCModel, AudioClip, align_audio_to_video, apc_encode, compute_log_mel, read_wav, train_apc
from .config import Config
from .container import load_modules, save_modules
from .dataharness import (SyntheticSample, get_style, load_dataset, load_frames, load_png, render_face, save_dataset,
                          save_png, synth_generate)
from .errors import DatasetIOError, InvalidArgumentError
from .face_model import KEYPOINT_INDICES, canonical_face, estimate_head_pose, pose_to_image
from .facialmap import build_weight_mask, rasterize_facial_map
from .geometry import LandmarkSequence, load_landmark_sequence, save_landmark_sequence
from .global_method import reset
from .metrics import MetricReport, evaluate_sequences
from .motion import (DELAY_FRAMES, MotionGenerator, PoseHistory, compose_landmarks, displacements_from_landmarks,
                     mouth_eye_forward, rollout_head_pose, train_motion)
from .renderer import (DiscriminatorNet, GanBatch, GeneratorInput, GeneratorNet, PerceptualPyramid, generate,
                       load_gan_checkpoint, retrieve_matched_style, save_gan_checkpoint, train_step_gan)
from .run_config import RunConfig
from .stylemap import (NUM_REFERENCES, TEMPLATE_NAMES, ISPSet, StyleMapper, build_isp,
                       default_templates, disentangle, keypoint_ground_truth, select_style_references,
                       train_stylemap_step)
from .tensor_util import image2tensor, np2tensor, tensor2image, tensor2np
from .transfer import StyleTransferNet, TransferConfig, TransferModels, pretrain_style_net, run_transfer, \
    write_transfer_manifest

logger = logging.getLogger(__name__)

APC_FILE = "apc.adst"
MOTION_FILE = "motion.adst"
STYLE_NET_FILE = "style_net.adst"
STYLEMAP_FILE = "stylemap.adst"
GENERATOR_FILE = "generator.adst"
ISP_DIR = "isp"


def prepare(cfg: RunConfig) -> None:
    '''
    seed every random source and set the canvas before any model is built.
    '''
    reset(cfg.seed, cfg.threads, device_cuda=cfg.device == "accelerator" and torch.cuda.is_available())
    Config.image_size = cfg.image_size


# model factories: the shapes depend only on the run config, so a checkpoint loads into a fresh build

def build_apc(cfg: RunConfig) -> APCModel:
    return APCModel(hidden=cfg.apc_hidden)

def build_motion(cfg: RunConfig) -> MotionGenerator:
    return MotionGenerator(feature_dim=cfg.apc_hidden, hidden=cfg.motion_hidden, k_me=cfg.k_me,
                           pose_hidden=cfg.pose_hidden)

def build_style_net(cfg: RunConfig) -> StyleTransferNet:
    return StyleTransferNet(image_size=cfg.image_size)

def build_mapper(cfg: RunConfig) -> StyleMapper:
    return StyleMapper(cfg.num_keypoints, cfg.image_size)

def build_gan(cfg: RunConfig) -> Tuple[GeneratorNet, DiscriminatorNet]:
    return GeneratorNet(channels=cfg.generator_channels), DiscriminatorNet(channels=cfg.discriminator_channels)


def _require(path: str) -> str:
    if not os.path.isfile(path):
        raise DatasetIOError("missing checkpoint", path)
    return path

def _load(checkpoint_dir: str, file_name: str, name: str, module: torch.nn.Module) -> torch.nn.Module:
    load_modules(_require(os.path.join(checkpoint_dir, file_name)), {name: module})
    module.eval()
    return module

def _write_json(path: str, data) -> str:
    try:
        with open(path, "w") as f:
            json.dump(data, f, indent=1)
    except OSError as e:
        raise DatasetIOError("cannot write {} ({})".format(os.path.basename(path), e.strerror), path) from e
    return path

def _makedirs(directory: str) -> None:
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise DatasetIOError("cannot create directory ({})".format(e.strerror), directory) from e


def synth_data(cfg: RunConfig, out: str) -> str:
    '''
    samples_per_style samples of every style in data_styles; sample i is generated with seed + i.
    Returns the manifest path.
    '''
    jobs = []
    for style_name in cfg.data_styles:
        style = get_style(style_name)
        for _ in range(cfg.samples_per_style):
            jobs.append((style, cfg.seed + len(jobs)))

    def run(job):
        style, seed = job
        return synth_generate(style, cfg.duration_s, seed, image_size=cfg.image_size)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        samples = list(pool.map(run, jobs))
    return save_dataset(out, samples)


def encode_audio(audio: AudioClip, apc: APCModel, fps: int) -> np.ndarray:
    '''
    stream features at the video frame rate, T x D.
    '''
    return align_audio_to_video(apc_encode(compute_log_mel(audio), apc), fps=fps)


def train_apc_stage(cfg: RunConfig, manifest: str, out: str, progress: bool = True) -> str:
    mels = [compute_log_mel(sample.audio) for sample in load_dataset(manifest)]
    model = build_apc(cfg)
    losses = train_apc(model, mels, cfg.apc_steps, cfg.apc_lr, cfg.apc_batch, cfg.apc_crop, seed=cfg.seed,
                       progress=progress)
    _makedirs(out)
    _write_json(os.path.join(out, "apc_losses.json"), losses)
    path = os.path.join(out, APC_FILE)
    save_modules(path, {"apc": model})
    return path


def motion_targets(sample: SyntheticSample, apc: APCModel, k_me: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    '''
    (features T x D, displacements T x K_me x 3, poses T x 6) of one sample; poses and object-space
    landmarks are recovered from the landmark file alone.
    '''
    features = encode_audio(sample.audio, apc, sample.landmarks.fps)
    frames = min(len(features), len(sample.landmarks))
    if frames <= DELAY_FRAMES:
        raise InvalidArgumentError("a motion sample needs more than {} frames, got {}".format(DELAY_FRAMES, frames))
    poses, objects = [], []
    for t in range(frames):
        pose, obj = estimate_head_pose(sample.landmarks.points[t])
        poses.append(pose.as_vector())
        objects.append(obj)
    deltas = displacements_from_landmarks(np.stack(objects), k_me).deltas
    return features[:frames], deltas, np.stack(poses)


def _same_style_pairs(samples: Sequence[SyntheticSample]) -> List[Tuple[np.ndarray, np.ndarray]]:
    by_style = defaultdict(list)
    for sample in samples:
        by_style[sample.style.name].append(sample.landmarks.vectors())
    pairs = []
    for vectors in by_style.values():
        for a, b in zip(vectors[:-1], vectors[1:]):
            n = min(len(a), len(b))
            pairs.append((a[:n], b[:n]))
    return pairs


def train_motion_stage(cfg: RunConfig, manifest: str, out: str, checkpoint_dir: Optional[str] = None,
                       progress: bool = True) -> str:
    '''
    train the motion generator on the frozen APC features, then pretrain the style transfer
    network on pairs of same-style samples.
    '''
    checkpoint_dir = out if checkpoint_dir is None else checkpoint_dir
    apc = _load(checkpoint_dir, APC_FILE, "apc", build_apc(cfg))
    samples = [SyntheticSample(s.audio, s.landmarks, None, s.style, s.poses) for s in load_dataset(manifest)]
    with torch.no_grad():
        sequences = [motion_targets(sample, apc, cfg.k_me) for sample in samples]

    model = build_motion(cfg)
    losses = train_motion(model, sequences, cfg.motion_steps, cfg.motion_lr, cfg.motion_batch, seed=cfg.seed,
                          progress=progress)

    style_net = build_style_net(cfg)
    pairs = _same_style_pairs(samples)
    style_losses = []
    if pairs:
        style_losses = pretrain_style_net(style_net, pairs, cfg.style_net_steps, cfg.style_net_lr,
                                          cfg.motion_batch, seed=cfg.seed, progress=progress)
    else:
        logger.warning("no style has two samples, the style transfer network stays untrained")

    _makedirs(out)
    _write_json(os.path.join(out, "motion_losses.json"), {"motion": losses, "style_net": style_losses})
    save_modules(os.path.join(out, STYLE_NET_FILE), {"style_net": style_net})
    path = os.path.join(out, MOTION_FILE)
    save_modules(path, {"motion": model})
    return path


def neutral_face_image(image_size: int) -> np.ndarray:
    zero = np.zeros(3)
    return render_face(pose_to_image(canonical_face(), zero, zero), image_size)


def _frame_ground_truth(landmarks: np.ndarray, image_size: int) -> Dict[str, np.ndarray]:
    pose, obj = estimate_head_pose(landmarks)
    return keypoint_ground_truth(obj, landmarks, pose.rotvec, pose.trans, image_size)


class _FramePool:
    '''
    every (sample, frame) of a rendered dataset with its style references, drawn in seeded batches.
    '''
    def __init__(self, samples: Sequence[SyntheticSample], seed: int):
        self.samples = [s for s in samples if s.frames is not None]
        if not self.samples:
            raise InvalidArgumentError("generator training needs a dataset with rendered frames")
        templates = default_templates()
        self.references = [select_style_references(s.landmarks, templates, s.frames) for s in self.samples]
        self.rng = np.random.default_rng(seed)

    def draw(self, batch_size: int) -> List[Tuple[int, int]]:
        picks = []
        for i in self.rng.integers(0, len(self.samples), size=batch_size):
            picks.append((int(i), int(self.rng.integers(0, len(self.samples[i])))))
        return picks


def _stylemap_batch(pool: _FramePool, picks, neutral: np.ndarray, neutral_truth: Dict,
                    image_size: int) -> Dict[str, torch.Tensor]:
    reference, truth = [], []
    for i, t in picks:
        sample = pool.samples[i]
        reference.append(image2tensor(sample.frames[t]))
        truth.append(_frame_ground_truth(sample.landmarks.points[t], image_size))
    b = len(picks)
    batch = {name: torch.stack([np2tensor(item[name]) for item in truth])
             for name in ("c", "rotation", "translation", "expression")}
    batch["reference"] = torch.stack(reference)
    # the synthetic world has a single identity, the reference frame is the ISP target
    batch["target"] = batch["reference"]
    batch["neutral"] = image2tensor(neutral)[None].expand(b, -1, -1, -1)
    for name in ("rotation", "translation", "expression"):
        batch["neutral_" + name] = np2tensor(neutral_truth[name])[None].expand(b, *neutral_truth[name].shape)
    return batch


def _gan_batch(pool: _FramePool, picks, neutral: np.ndarray, isps: Sequence[ISPSet], image_size: int) -> GanBatch:
    inputs, targets, masks, matched = [], [], [], []
    for i, t in picks:
        sample = pool.samples[i]
        landmarks = sample.landmarks.points[t]
        inputs.append(GeneratorInput(neutral, rasterize_facial_map(landmarks, size=image_size), isps[i]))
        targets.append(sample.frames[t])
        masks.append(build_weight_mask(landmarks, size=image_size))
        matched.append(retrieve_matched_style(landmarks, pool.references[i]))
    return GanBatch.stack(inputs, targets, masks, matched)


def train_generator_stage(cfg: RunConfig, manifest: str, out: str, progress: bool = True) -> str:
    '''
    train the style mapping networks on the harness decomposition of every frame, build one ISP set
    per sample with them and train the generator against the rendered frames.
    '''
    if cfg.num_keypoints != len(KEYPOINT_INDICES):
        raise InvalidArgumentError("the synthetic ground truth has {} keypoints, num_keypoints is {}".format(
            len(KEYPOINT_INDICES), cfg.num_keypoints))
    size = cfg.image_size
    pool = _FramePool(list(load_dataset(manifest)), cfg.seed)
    neutral = neutral_face_image(size)
    neutral_landmarks = pose_to_image(canonical_face(), np.zeros(3), np.zeros(3))
    neutral_truth = keypoint_ground_truth(canonical_face(), neutral_landmarks, np.zeros(3), np.zeros(3), size)

    mapper = build_mapper(cfg)
    optimizer = torch.optim.Adam(mapper.parameters(), lr=cfg.stylemap_lr)
    stylemap_losses = []
    for step in tqdm(range(cfg.stylemap_steps), desc="stylemap", disable=not progress):
        batch = _stylemap_batch(pool, pool.draw(cfg.stylemap_batch), neutral, neutral_truth, size)
        stylemap_losses.append(train_stylemap_step(mapper, batch, optimizer))
        logger.debug("stylemap step %d: %s", step, stylemap_losses[-1])

    mapper.eval()
    neutral_parts = disentangle(neutral, mapper.extractor, mapper.pose_net)
    isps = [build_isp(neutral, neutral_parts, references, mapper) for references in pool.references]

    g, d = build_gan(cfg)
    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.generator_lr, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(d.parameters(), lr=cfg.generator_lr, betas=(0.5, 0.999))
    perceptual = PerceptualPyramid()
    lambdas = (cfg.lambda_pw, cfg.lambda_p, cfg.lambda_f)
    gan_losses = []
    for _ in tqdm(range(cfg.generator_steps), desc="generator", disable=not progress):
        batch = _gan_batch(pool, pool.draw(cfg.generator_batch), neutral, isps, size)
        loss_g, loss_d = train_step_gan(batch, g, d, (opt_g, opt_d), perceptual, lambdas)
        gan_losses.append({"g": loss_g, "d": loss_d})
    if gan_losses:
        logger.info("generator training: %d steps, L_G %.5g -> %.5g", len(gan_losses), gan_losses[0]["g"],
                    gan_losses[-1]["g"])

    _makedirs(out)
    _write_json(os.path.join(out, "generator_losses.json"), {"stylemap": stylemap_losses, "gan": gan_losses})
    save_modules(os.path.join(out, STYLEMAP_FILE), {"stylemap": mapper})
    path = os.path.join(out, GENERATOR_FILE)
    save_gan_checkpoint(path, g, d)
    return path


def build_isp_stage(cfg: RunConfig, image_path: str, style_landmarks: str, style_frames: str, out: str,
                    checkpoint_dir: Optional[str] = None) -> List[str]:
    '''
    the 4 ISP images of a source image in the style of a video (its landmark file and frame directory).
    '''
    checkpoint_dir = out if checkpoint_dir is None else checkpoint_dir
    mapper = _load(checkpoint_dir, STYLEMAP_FILE, "stylemap", build_mapper(cfg))
    sequence = load_landmark_sequence(style_landmarks)
    frames = load_frames(style_frames)
    if len(frames) != len(sequence):
        raise InvalidArgumentError("{} frames for {} landmark frames".format(len(frames), len(sequence)))
    references = select_style_references(sequence, default_templates(), frames)
    source = load_png(image_path)
    isp = build_isp(source, disentangle(source, mapper.extractor, mapper.pose_net), references, mapper)

    directory = os.path.join(out, ISP_DIR)
    _makedirs(directory)
    paths = []
    for k, image in enumerate(isp.images):
        paths.append(os.path.join(directory, "isp_{}.png".format(k)))
        save_png(paths[-1], image)
    _write_json(os.path.join(directory, "references.json"), [
        {"template": name, "frame": index, "points": lm.points.tolist()}
        for name, index, lm in zip(TEMPLATE_NAMES, references.source_indices, references.landmarks)])
    return paths


def transfer_stage(cfg: RunConfig, reference_landmarks: str, audio_path: str, out: str,
                   checkpoint_dir: Optional[str] = None, progress: bool = True) -> str:
    '''
    fine-tune the motion generator towards the style of a reference landmark file; the transferred
    motion and style networks are written to out.
    '''
    checkpoint_dir = out if checkpoint_dir is None else checkpoint_dir
    models = TransferModels(apc=_load(checkpoint_dir, APC_FILE, "apc", build_apc(cfg)),
                            motion=_load(checkpoint_dir, MOTION_FILE, "motion", build_motion(cfg)),
                            style_net=_load(checkpoint_dir, STYLE_NET_FILE, "style_net", build_style_net(cfg)))
    models.motion.train()
    models.style_net.train()
    transfer_cfg = TransferConfig(gamma_mode=cfg.gamma_mode, gamma=cfg.gamma, epochs=cfg.transfer_epochs,
                                  steps_per_epoch=cfg.transfer_steps_per_epoch, lr_phase1=cfg.transfer_lr_phase1,
                                  lr_phase2=cfg.transfer_lr_phase2, seed=cfg.seed,
                                  style_name=os.path.splitext(os.path.basename(reference_landmarks))[0])
    result = run_transfer(load_landmark_sequence(reference_landmarks), read_wav(audio_path), models, transfer_cfg,
                          progress=progress)

    _makedirs(out)
    _write_json(os.path.join(out, "transfer_history.json"), result.history)
    write_transfer_manifest(os.path.join(out, "transfer.json"), transfer_cfg, reference_landmarks, audio_path)
    save_modules(os.path.join(out, STYLE_NET_FILE), {"style_net": result.style_net})
    path = os.path.join(out, MOTION_FILE)
    save_modules(path, {"motion": result.motion})
    return path


def _isp_for(checkpoint_dir: str) -> ISPSet:
    directory = os.path.join(checkpoint_dir, ISP_DIR)
    paths = [os.path.join(directory, "isp_{}.png".format(k)) for k in range(NUM_REFERENCES)]
    missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        raise DatasetIOError("missing ISP image, run build-isp into the checkpoint directory", missing[0])
    return ISPSet([load_png(p) for p in paths])


def generate_landmarks(audio: AudioClip, apc: APCModel, motion: MotionGenerator, fps: int,
                       rng: Optional[np.random.Generator] = None) -> LandmarkSequence:
    '''
    audio -> image-space landmark sequence: mouth/eye displacements plus a rolled-out head pose.
    '''
    with torch.no_grad():
        features = encode_audio(audio, apc, fps)
        deltas = mouth_eye_forward(features, motion)
        poses = rollout_head_pose(PoseHistory.rest(), features, motion, rng)
        points = compose_landmarks(np2tensor(deltas.deltas), np2tensor(poses), motion.k_me)
    return LandmarkSequence(tensor2np(points), fps)


def animate_stage(cfg: RunConfig, audio_path: str, image_path: str, checkpoint_dir: str, out: str) -> str:
    '''
    audio + single source image -> out/frames/<t>.png and out/landmarks.jsonl; returns the landmark path.
    '''
    for file_name in (APC_FILE, MOTION_FILE, GENERATOR_FILE):
        _require(os.path.join(checkpoint_dir, file_name))
    apc = _load(checkpoint_dir, APC_FILE, "apc", build_apc(cfg))
    motion = _load(checkpoint_dir, MOTION_FILE, "motion", build_motion(cfg))
    g, _ = build_gan(cfg)
    load_gan_checkpoint(os.path.join(checkpoint_dir, GENERATOR_FILE), g)
    g.eval()

    source = load_png(image_path)
    if source.shape[:2] != (cfg.image_size, cfg.image_size):
        raise InvalidArgumentError("the source image is {}x{}, the run uses {}x{}".format(
            source.shape[1], source.shape[0], cfg.image_size, cfg.image_size))
    isp = _isp_for(checkpoint_dir)
    sequence = generate_landmarks(read_wav(audio_path), apc, motion, Config.fps, np.random.default_rng(cfg.seed))

    frames_dir = os.path.join(out, "frames")
    _makedirs(frames_dir)
    with torch.no_grad():
        for t in range(len(sequence)):
            x = GeneratorInput(source, rasterize_facial_map(sequence.points[t], size=cfg.image_size), isp)
            save_png(os.path.join(frames_dir, "{:05d}.png".format(t)), tensor2image(generate(x, g)))
    path = os.path.join(out, "landmarks.jsonl")
    save_landmark_sequence(path, sequence)
    logger.info("animated %d frames into %s", len(sequence), frames_dir)
    return path


def evaluate_stage(cfg: RunConfig, reference_path: str, generated_path: str, out: str,
                   frames_dir: Optional[str] = None) -> MetricReport:
    '''
    the metric report of two landmark files (and the generated frames, for CPBD), written to out/report.json.
    No model weights are involved.
    '''
    reference = load_landmark_sequence(reference_path)
    generated = load_landmark_sequence(generated_path)
    frames = load_frames(frames_dir) if frames_dir is not None else None
    report = evaluate_sequences(reference.points, generated.points, frames,
                                range(1, cfg.metric_f_max + 1), range(1, cfg.metric_v_max + 1),
                                workers=cfg.workers)
    _makedirs(out)
    report.to_json(os.path.join(out, "report.json"))
    return report
