'''
Style mapping: style reference retrieval, disentanglement into keypoints and
pose/expression, thin-plate-spline feature warping and the intermediate style
patterns (ISP).
'''
from __future__ import annotations
import json
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import Config
from .errors import DatasetIOError, DatasetValidationError, InvalidArgumentError, SingularWarpError
from .face_model import FACE_SCALE, KEYPOINT_INDICES, canonical_face, deform_face, pose_to_image
from .geometry import (DEFAULT_NUM_KEYPOINTS, KeypointSet, Landmarks68, LandmarkSequence, PoseParams,
                       rotvec_to_matrix,
                       recompose)
from .tensor_util import image2tensor, np2tensor, tensor2image, tensor2np

logger = logging.getLogger(__name__)

TEMPLATE_NAMES = ("neutral", "mouth-open", "head-turn", "eyes-closed")
NUM_REFERENCES = 4


class MotionTemplate:
    def __init__(self, name: str, landmark_pattern: Union[Landmarks68, np.ndarray]):
        if name not in TEMPLATE_NAMES:
            raise InvalidArgumentError("unknown motion template '{}', expected one of {}".format(name, TEMPLATE_NAMES))
        self.name = name
        self.landmark_pattern = Landmarks68.as_landmarks(landmark_pattern)


def default_templates() -> List[MotionTemplate]:
    '''
    neutral face, maximal mouth opening, maximal head yaw and closed eyes on the canonical face.
    '''
    rest = canonical_face()
    zero = np.zeros(3)
    patterns = {
        "neutral": pose_to_image(rest, zero, zero),
        "mouth-open": pose_to_image(deform_face(rest, 1.2, 1.), zero, zero),
        "head-turn": pose_to_image(rest, np.array([0., np.deg2rad(30.), 0.]), zero),
        "eyes-closed": pose_to_image(deform_face(rest, 0., 0.05), zero, zero),
    }
    return [MotionTemplate(name, patterns[name]) for name in TEMPLATE_NAMES]


def save_templates(path: str, templates: Sequence[MotionTemplate]) -> None:
    records = [{"name": t.name, "points": t.landmark_pattern.points.tolist()} for t in templates]
    try:
        with open(path, "w") as f:
            json.dump(records, f, indent=1)
    except OSError as e:
        raise DatasetIOError("cannot write templates ({})".format(e.strerror), path) from e

def load_templates(path: str) -> List[MotionTemplate]:
    try:
        with open(path, "r") as f:
            records = json.load(f)
    except OSError as e:
        raise DatasetIOError("cannot read templates ({})".format(e.strerror), path) from e
    except ValueError as e:
        raise DatasetIOError("corrupt template file ({})".format(e), path) from e
    templates = [MotionTemplate(r["name"], r["points"]) for r in records]
    if len(templates) != NUM_REFERENCES:
        raise DatasetValidationError("{}: expected 4 motion templates, found {}".format(path, len(templates)))
    return templates


class StyleReferenceSet:
    '''
    the 4 frames of a style video retrieved for the 4 motion templates.
    frames may be None when only the landmarks are needed.
    '''
    def __init__(self, frames: Optional[Sequence[np.ndarray]], source_indices: Sequence[int],
                 landmarks: Sequence[Landmarks68]):
        if len(source_indices) != NUM_REFERENCES or len(landmarks) != NUM_REFERENCES:
            raise InvalidArgumentError("a style reference set has exactly 4 entries")
        if frames is not None and len(frames) != NUM_REFERENCES:
            raise InvalidArgumentError("a style reference set has exactly 4 frames, got {}".format(len(frames)))
        self.frames = None if frames is None else [np.asarray(f) for f in frames]
        self.source_indices = [int(i) for i in source_indices]
        self.landmarks = [Landmarks68.as_landmarks(lm) for lm in landmarks]

    def __len__(self) -> int:
        return NUM_REFERENCES

    def permuted(self, order: Sequence[int]) -> StyleReferenceSet:
        frames = None if self.frames is None else [self.frames[i] for i in order]
        return StyleReferenceSet(frames, [self.source_indices[i] for i in order], [self.landmarks[i] for i in order])


class ISPSet:
    def __init__(self, images: Sequence[np.ndarray]):
        if len(images) != NUM_REFERENCES:
            raise InvalidArgumentError("an ISP set has exactly 4 images, got {}".format(len(images)))
        self.images = [np.asarray(image) for image in images]

    def __len__(self) -> int:
        return NUM_REFERENCES

    def stacked(self) -> torch.Tensor:
        '''
        12 x H x W tensor in [-1, 1], the ISP part of a generator input.
        '''
        return torch.cat([image2tensor(image) for image in self.images], dim=0)


def _centered(points: np.ndarray) -> np.ndarray:
    return points - points.mean(axis=-2, keepdims=True)


def select_style_references(video_landmarks, templates: Sequence[MotionTemplate],
                            frames: Optional[Sequence[np.ndarray]] = None) -> StyleReferenceSet:
    '''
    for each template, the frame with the smallest mean landmark distance to its pattern after
    centroid alignment; ties go to the lowest frame index.
    '''
    if isinstance(video_landmarks, LandmarkSequence):
        video = video_landmarks.points
    else:
        video = np.stack([Landmarks68.as_landmarks(lm).points for lm in video_landmarks])
    if video.shape[0] < NUM_REFERENCES:
        raise InvalidArgumentError("style reference search needs >= 4 frames, got {}".format(video.shape[0]))
    if len(templates) != NUM_REFERENCES:
        raise InvalidArgumentError("exactly 4 motion templates are needed, got {}".format(len(templates)))

    aligned = _centered(video)
    indices = []
    for template in templates:
        pattern = _centered(template.landmark_pattern.points)
        distance = np.linalg.norm(aligned - pattern[None], axis=-1).mean(axis=-1)
        indices.append(int(np.argmin(distance)))

    chosen_frames = None if frames is None else [frames[i] for i in indices]
    return StyleReferenceSet(chosen_frames, indices, [video[i] for i in indices])


def _encoder(in_channels: int, channels: Sequence[int]) -> nn.Sequential:
    layers = []
    for out_channels in channels:
        layers += [nn.Conv2d(in_channels, out_channels, 4, 2, 1), nn.InstanceNorm2d(out_channels, affine=True),
                   nn.LeakyReLU(0.2)]
        in_channels = out_channels
    return nn.Sequential(*layers)


class KeypointExtractor(nn.Module):
    '''
    image -> K canonical keypoints c_k (pixels, centered on the face).
    '''
    def __init__(self, num_keypoints: int = DEFAULT_NUM_KEYPOINTS, image_size: int = None,
                 channels: Sequence[int] = (16, 32, 64, 64)):
        super().__init__()
        self.num_keypoints = num_keypoints
        self.image_size = Config.image_size if image_size is None else image_size
        self.encoder = _encoder(3, channels)
        self.head = nn.Linear(channels[-1], 3 * num_keypoints)
        self.to(device=Config.device, dtype=Config.dtype)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        z = self.encoder(image).mean(dim=(2, 3))
        return self.head(z).reshape(-1, self.num_keypoints, 3) * self.image_size


def orthonormalize(m: torch.Tensor) -> torch.Tensor:
    '''
    the nearest rotation (det = +1) to each ... x 3 x 3 matrix.
    '''
    u, _, vh = torch.linalg.svd(m)
    d = torch.sign(torch.linalg.det(u @ vh))
    fix = torch.ones(m.shape[:-2] + (3,), dtype=m.dtype, device=m.device)
    fix = torch.cat([fix[..., :2], d[..., None]], dim=-1)
    return u @ torch.diag_embed(fix) @ vh


class PoseExpressionNet(nn.Module):
    '''
    image -> (R, tau, eps_k). tau is located by a soft-argmax over a learned heatmap plus a learned offset.
    '''
    def __init__(self, num_keypoints: int = DEFAULT_NUM_KEYPOINTS, image_size: int = None,
                 channels: Sequence[int] = (16, 32, 64, 64)):
        super().__init__()
        self.num_keypoints = num_keypoints
        self.image_size = Config.image_size if image_size is None else image_size
        self.encoder = _encoder(3, channels)
        self.heatmap = nn.Conv2d(channels[-1], 1, 3, 1, 1)
        self.offset = nn.Parameter(torch.zeros(3))
        self.head = nn.Linear(channels[-1], 9 + 3 * num_keypoints)
        self.to(device=Config.device, dtype=Config.dtype)

    def forward(self, image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        feat = self.encoder(image)
        b, _, h, w = feat.shape

        logits = self.heatmap(feat).reshape(b, -1)
        weights = torch.softmax(logits, dim=-1).reshape(b, h, w)
        scale = float(self.image_size - 1)
        ys = torch.linspace(0., scale, h, dtype=feat.dtype, device=feat.device)
        xs = torch.linspace(0., scale, w, dtype=feat.dtype, device=feat.device)
        tx = (weights.sum(dim=1) * xs).sum(dim=-1)
        ty = (weights.sum(dim=2) * ys).sum(dim=-1)
        translation = torch.stack([tx, ty, torch.zeros_like(tx)], dim=-1) + self.offset * self.image_size

        z = self.head(feat.mean(dim=(2, 3)))
        eye = torch.eye(3, dtype=z.dtype, device=z.device)
        rotation = orthonormalize(eye + z[:, :9].reshape(b, 3, 3))
        expression = z[:, 9:].reshape(b, self.num_keypoints, 3) * self.image_size * 0.05
        return rotation, translation, expression


class IntermediateGenerator(nn.Module):
    '''
    4-down / 4-up encoder-decoder; the decoder sees the warped neutral features concatenated
    with the reference pose and expression broadcast over space.
    '''
    def __init__(self, num_keypoints: int = DEFAULT_NUM_KEYPOINTS, channels: Sequence[int] = (32, 64, 128, 128)):
        super().__init__()
        if len(channels) != 4:
            raise InvalidArgumentError("the intermediate generator has 4 encoder stages")
        self.encoder = _encoder(3, channels)
        condition = 9 + 3 + 3 * num_keypoints
        layers = []
        in_channels = channels[-1] + condition
        for out_channels in list(reversed(channels[:-1])) + [channels[0]]:
            layers += [nn.ConvTranspose2d(in_channels, out_channels, 4, 2, 1),
                       nn.InstanceNorm2d(out_channels, affine=True), nn.ReLU()]
            in_channels = out_channels
        layers += [nn.Conv2d(in_channels, 3, 3, 1, 1), nn.Tanh()]
        self.decoder = nn.Sequential(*layers)
        self.to(device=Config.device, dtype=Config.dtype)

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        return self.encoder(image)

    def decode(self, warped: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        b, _, h, w = warped.shape
        condition = condition[:, :, None, None].expand(b, condition.shape[1], h, w)
        return self.decoder(torch.cat([warped, condition], dim=1))


class StyleMapper(nn.Module):
    def __init__(self, num_keypoints: int = DEFAULT_NUM_KEYPOINTS, image_size: int = None,
                 encoder_channels: Sequence[int] = (16, 32, 64, 64),
                 generator_channels: Sequence[int] = (32, 64, 128, 128)):
        super().__init__()
        self.num_keypoints = num_keypoints
        self.image_size = Config.image_size if image_size is None else image_size
        self.extractor = KeypointExtractor(num_keypoints, self.image_size, encoder_channels)
        self.pose_net = PoseExpressionNet(num_keypoints, self.image_size, encoder_channels)
        self.generator = IntermediateGenerator(num_keypoints, generator_channels)


def _image_batch(image, image_size: int) -> torch.Tensor:
    if isinstance(image, torch.Tensor):
        t = image if image.dim() == 4 else image[None]
    else:
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise InvalidArgumentError("expected an H x W x 3 RGB image, got shape {}".format(image.shape))
        t = image2tensor(image)[None]
    if tuple(t.shape[-2:]) != (image_size, image_size) or t.shape[1] != 3:
        raise InvalidArgumentError("expected a {0}x{0} RGB image, got {1}".format(image_size, tuple(t.shape[1:])))
    return t


def disentangle(image, extractor_model: KeypointExtractor,
                pose_model: PoseExpressionNet) -> Tuple[KeypointSet, PoseParams]:
    '''
    canonical keypoints c_k from the extractor and (R, tau, eps_k) from the pose-expression network.
    '''
    x = _image_batch(image, extractor_model.image_size)
    with torch.no_grad():
        c = extractor_model(x)[0]
        rotation, translation, expression = pose_model(x)
    return KeypointSet(tensor2np(c)), PoseParams(tensor2np(rotation[0]), tensor2np(translation[0]),
                                                 tensor2np(expression[0]))


def _check_correspondences(points: torch.Tensor, what: str) -> None:
    # examination
    k = points.shape[-2]
    if k < 4:
        raise SingularWarpError("a thin-plate spline needs >= 4 keypoints, got {}".format(k))
    distances = torch.cdist(points, points) + torch.eye(k, dtype=points.dtype, device=points.device)
    if bool((distances.min() < 1e-9)):
        raise SingularWarpError("{} keypoints contain duplicates".format(what))
    centered = points - points.mean(dim=-2, keepdim=True)
    sv = torch.linalg.svdvals(centered)
    if bool((sv[..., -1] <= 1e-9 * sv[..., 0].clamp_min(1e-30)).any()):
        raise SingularWarpError("{} keypoints are collinear".format(what))
    # examination done


def _tps_kernel(r2: torch.Tensor) -> torch.Tensor:
    return r2 * torch.log(r2.clamp_min(1e-30))


def tps_grid(src: torch.Tensor, dst: torch.Tensor, height: int, width: int) -> torch.Tensor:
    '''
    fit the thin-plate spline T with T(dst_i) = src_i (pixel coordinates, B x K x 2) and evaluate it
    on the output pixel grid; returns the B x H x W x 2 sampling grid in [-1, 1] (align_corners=True).
    '''
    scale = torch.tensor([2. / max(width - 1, 1), 2. / max(height - 1, 1)], dtype=src.dtype, device=src.device)
    src_n = src * scale - 1.
    dst_n = dst * scale - 1.
    b, k, _ = dst_n.shape

    kernel = _tps_kernel(torch.cdist(dst_n, dst_n) ** 2)
    ones = torch.ones(b, k, 1, dtype=src.dtype, device=src.device)
    p = torch.cat([ones, dst_n], dim=-1)
    system = torch.zeros(b, k + 3, k + 3, dtype=src.dtype, device=src.device)
    system[:, :k, :k] = kernel
    system[:, :k, k:] = p
    system[:, k:, :k] = p.transpose(1, 2)
    rhs = torch.zeros(b, k + 3, 2, dtype=src.dtype, device=src.device)
    rhs[:, :k] = src_n
    try:
        params = torch.linalg.solve(system, rhs)
    except RuntimeError as e:
        raise SingularWarpError("the thin-plate spline system is singular ({})".format(e)) from e
    w, a = params[:, :k], params[:, k:]

    ys = torch.linspace(-1., 1., height, dtype=src.dtype, device=src.device)
    xs = torch.linspace(-1., 1., width, dtype=src.dtype, device=src.device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    grid = torch.stack([gx, gy], dim=-1).reshape(1, -1, 2).expand(b, -1, 2)
    u = _tps_kernel(torch.cdist(grid, dst_n) ** 2)
    mapped = a[:, :1] + grid @ a[:, 1:] + u @ w
    return mapped.reshape(b, height, width, 2)


def warp_features(feature_map: torch.Tensor, src_keypoints, dst_keypoints) -> torch.Tensor:
    '''
    warp a C x H x W (or B x C x H x W) map so that content at src keypoints moves to dst keypoints.
    Keypoints are 2-D pixel coordinates of the feature map, K x 2 (or B x K x 2).
    Backward bilinear sampling; out-of-bounds samples take border values.
    '''
    batched = feature_map.dim() == 4
    x = feature_map if batched else feature_map[None]
    src = np2tensor(src_keypoints.project2d() if isinstance(src_keypoints, KeypointSet) else src_keypoints)
    dst = np2tensor(dst_keypoints.project2d() if isinstance(dst_keypoints, KeypointSet) else dst_keypoints)
    src = src.to(x.dtype)
    dst = dst.to(x.dtype)
    if src.dim() == 2:
        src = src[None].expand(x.shape[0], -1, -1)
        dst = dst[None].expand(x.shape[0], -1, -1)
    if src.shape != dst.shape:
        raise InvalidArgumentError("keypoint sets differ in shape: {} vs {}".format(tuple(src.shape), tuple(dst.shape)))
    _check_correspondences(src, "source")
    _check_correspondences(dst, "destination")

    grid = tps_grid(src, dst, x.shape[2], x.shape[3])
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="border", align_corners=True)
    return out if batched else out[0]


def pose_condition(rotation: torch.Tensor, translation: torch.Tensor, expression: torch.Tensor,
                   image_size: int) -> torch.Tensor:
    '''
    the flat B x (12 + 3K) style vector broadcast into the intermediate decoder.
    '''
    b = rotation.shape[0]
    return torch.cat([rotation.reshape(b, 9), translation / image_size - 0.5,
                      expression.reshape(b, -1) / image_size], dim=-1)


def isp_forward(mapper: StyleMapper, neutral: torch.Tensor, c: torch.Tensor, neutral_pose: Tuple,
                reference_pose: Tuple) -> torch.Tensor:
    '''
    differentiable ISP synthesis for batches: neutral images B x 3 x S x S, neutral keypoints c (B x K x 3),
    poses as (R, tau, eps) tensors. The reference contributes only its pose and expression.
    '''
    size = mapper.image_size
    neutral_kp = recompose(c, *neutral_pose)
    reference_kp = recompose(c, *reference_pose)

    feat = mapper.generator.encode(neutral)
    to_feat = (feat.shape[-1] - 1) / (size - 1)
    warped = warp_features(feat, neutral_kp[..., :2] * to_feat, reference_kp[..., :2] * to_feat)
    return mapper.generator.decode(warped, pose_condition(*reference_pose, size))


def build_isp(neutral_image, neutral_disentangled: Tuple[KeypointSet, PoseParams],
              reference_set: StyleReferenceSet, mapper: StyleMapper) -> ISPSet:
    '''
    one ISP per reference: the neutral features are warped from C_k (neutral pose) to the barred C_k
    (reference pose and expression applied to the neutral c_k) and decoded.
    '''
    if reference_set.frames is None:
        raise InvalidArgumentError("the style reference set carries no frames")
    c, neutral_pose = neutral_disentangled
    neutral = _image_batch(neutral_image, mapper.image_size)
    c_t = np2tensor(c.points)[None]
    pose_n = (np2tensor(neutral_pose.rotation)[None], np2tensor(neutral_pose.translation)[None],
              np2tensor(neutral_pose.expression)[None])

    images = []
    with torch.no_grad():
        for frame in reference_set.frames:
            reference = _image_batch(frame, mapper.image_size)
            pose_r = mapper.pose_net(reference)
            images.append(tensor2image(isp_forward(mapper, neutral, c_t, pose_n, pose_r)[0]))
    return ISPSet(images)


def train_stylemap_step(mapper: StyleMapper, batch: Dict[str, torch.Tensor],
                        optimizer: torch.optim.Optimizer) -> Dict[str, float]:
    '''
    one update of the style mapping networks.
    batch: "neutral", "reference", "target" images B x 3 x S x S and the ground truth
    "c" (B x K x 3), "rotation" (B x 3 x 3), "translation" (B x 3), "expression" (B x K x 3)
    of the reference plus "neutral_rotation", "neutral_translation", "neutral_expression".
    '''
    size = mapper.image_size
    optimizer.zero_grad()
    c = mapper.extractor(batch["neutral"])
    pose_n = mapper.pose_net(batch["neutral"])
    pose_r = mapper.pose_net(batch["reference"])
    isp = isp_forward(mapper, batch["neutral"], c, pose_n, pose_r)

    terms = {
        "image": torch.mean(torch.abs(isp - batch["target"])),
        "keypoints": torch.mean((c - batch["c"]) ** 2) / size ** 2,
        "pose": (torch.mean((pose_r[0] - batch["rotation"]) ** 2)
                 + torch.mean((pose_n[0] - batch["neutral_rotation"]) ** 2)
                 + torch.mean((pose_r[1] - batch["translation"]) ** 2) / size ** 2
                 + torch.mean((pose_n[1] - batch["neutral_translation"]) ** 2) / size ** 2),
        "expression": (torch.mean((pose_r[2] - batch["expression"]) ** 2)
                       + torch.mean((pose_n[2] - batch["neutral_expression"]) ** 2)) / size ** 2,
    }
    total = sum(terms.values())
    total.backward()
    optimizer.step()
    out = {name: float(value.detach()) for name, value in terms.items()}
    out["total"] = float(total.detach())
    return out


def keypoint_ground_truth(object_landmarks: np.ndarray, image_landmarks: np.ndarray, rotvec, trans,
                          image_size: int = None) -> Dict[str, np.ndarray]:
    '''
    the synthetic-harness decomposition of a rendered face: c_k = scaled rest keypoints,
    (R, tau) = head pose, eps_k = what remains of the image keypoints.
    '''
    image_size = Config.image_size if image_size is None else image_size
    scale = FACE_SCALE * image_size / 512.
    rest = canonical_face()
    c = scale * rest[KEYPOINT_INDICES]
    rotation = rotvec_to_matrix(np.asarray(rotvec, dtype=np.float64))
    translation = np.array([image_size / 2., image_size / 2., 0.]) + np.asarray(trans)
    expression = np.asarray(image_landmarks)[KEYPOINT_INDICES] - recompose(c, rotation, translation, np.zeros_like(c))
    return {"c": c, "rotation": rotation, "translation": translation, "expression": expression}
