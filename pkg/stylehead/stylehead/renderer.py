'''
The style-aware generator, the patch discriminator and the image losses:
LSGAN, pixel-wise, perceptual, feature matching and style-aware photometric.
'''
from __future__ import annotations
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from .config import Config
from .container import load_modules, save_modules
from .errors import InvalidArgumentError
from .facialmap import FacialMap, WeightMask
from .geometry import Landmarks68
from .stylemap import ISPSet, StyleReferenceSet
from .tensor_util import image2tensor, np2tensor

logger = logging.getLogger(__name__)

GENERATOR_CHANNELS = (64, 128, 256, 512, 512, 512, 512, 512)
INPUT_CHANNELS = 18
LAMBDAS = (100., 10., 1.)
PERCEPTUAL_SEED = 20231
GRAD_CLIP = 10.


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1), nn.InstanceNorm2d(channels, affine=True), nn.ReLU(),
            nn.Conv2d(channels, channels, 3, 1, 1), nn.InstanceNorm2d(channels, affine=True))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.body(x)


class GeneratorNet(nn.Module):
    '''
    stride-2 convolutional encoder (residual block after every layer but the first) and a
    mirrored transposed-convolution decoder with skip connections; tanh output.
    '''
    def __init__(self, in_channels: int = INPUT_CHANNELS, channels: Sequence[int] = GENERATOR_CHANNELS):
        super().__init__()
        if len(channels) < 1:
            raise InvalidArgumentError("the generator needs at least one encoder layer")
        self.in_channels = in_channels
        self.channels = tuple(channels)

        self.down = nn.ModuleList()
        previous = in_channels
        for i, c in enumerate(self.channels):
            if i == 0:
                layer = nn.Sequential(nn.Conv2d(previous, c, 4, 2, 1), nn.LeakyReLU(0.2))
            else:
                layer = nn.Sequential(nn.Conv2d(previous, c, 4, 2, 1), nn.InstanceNorm2d(c, affine=True),
                                      nn.LeakyReLU(0.2), ResidualBlock(c))
            self.down.append(layer)
            previous = c

        self.up = nn.ModuleList()
        for i in range(len(self.channels) - 1, 0, -1):
            c = self.channels[i - 1]
            self.up.append(nn.Sequential(nn.ConvTranspose2d(previous, c, 4, 2, 1),
                                         nn.InstanceNorm2d(c, affine=True), nn.ReLU()))
            previous = 2 * c
        self.out = nn.Sequential(nn.ConvTranspose2d(previous, 3, 4, 2, 1), nn.Tanh())
        self.to(device=Config.device, dtype=Config.dtype)

    @property
    def num_layers(self) -> int:
        return len(self.channels)

    def encode(self, x: torch.Tensor) -> List[torch.Tensor]:
        '''
        the output of every encoder layer, from the first (half resolution) to the bottleneck.
        '''
        features = []
        for layer in self.down:
            x = layer(x)
            features.append(x)
        return features

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        features = self.encode(x)
        y = features[-1]
        for layer, skip in zip(self.up, reversed(features[:-1])):
            y = torch.cat([layer(y), skip], dim=1)
        return self.out(y)


class DiscriminatorNet(nn.Module):
    '''
    PatchGAN over the image concatenated with its 3-channel facial map.
    Returns (score grid, intermediate features).
    '''
    def __init__(self, in_channels: int = 6, channels: Sequence[int] = (64, 128, 256, 512)):
        super().__init__()
        layers = []
        previous = in_channels
        for i, c in enumerate(channels):
            stride = 2 if i < len(channels) - 1 else 1
            block = [nn.Conv2d(previous, c, 4, stride, 1)]
            if i > 0:
                block.append(nn.InstanceNorm2d(c, affine=True))
            block.append(nn.LeakyReLU(0.2))
            layers.append(nn.Sequential(*block))
            previous = c
        self.layers = nn.ModuleList(layers)
        self.score = nn.Conv2d(previous, 1, 4, 1, 1)
        self.to(device=Config.device, dtype=Config.dtype)

    def forward(self, image: torch.Tensor, facial_map: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        x = torch.cat([image, facial_map], dim=1)
        features = []
        for layer in self.layers:
            x = layer(x)
            features.append(x)
        return self.score(x), features


class PerceptualPyramid(nn.Module):
    '''
    a frozen, randomly initialized 3-scale convolutional feature extractor with a fixed seed.
    '''
    def __init__(self, channels: Sequence[int] = (16, 32, 64), seed: int = PERCEPTUAL_SEED):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            blocks = []
            previous = 3
            for c in channels:
                blocks.append(nn.Sequential(nn.Conv2d(previous, c, 3, 1, 1), nn.ReLU(), nn.AvgPool2d(2)))
                previous = c
            self.blocks = nn.ModuleList(blocks)
        for p in self.parameters():
            p.requires_grad_(False)
        self.to(device=Config.device, dtype=Config.dtype)
        self.eval()

    def forward(self, image: torch.Tensor) -> List[torch.Tensor]:
        features = []
        x = image
        for block in self.blocks:
            x = block(x)
            features.append(x)
        return features


class GeneratorInput:
    '''
    source image (3), facial map (3, replicated) and the 4 ISP images (12), concatenated to 18 channels.
    '''
    def __init__(self, source_image, facial_map: Union[FacialMap, torch.Tensor], isp: Union[ISPSet, torch.Tensor]):
        self.source = image2tensor(source_image) if isinstance(source_image, np.ndarray) else np2tensor(source_image)
        self.facial_map = facial_map.as_tensor() if isinstance(facial_map, FacialMap) else np2tensor(facial_map)
        self.isp = isp.stacked() if isinstance(isp, ISPSet) else np2tensor(isp)

        # examination
        if (self.source.shape[0], self.facial_map.shape[0], self.isp.shape[0]) != (3, 3, 12):
            raise InvalidArgumentError("generator input parts need 3, 3 and 12 channels, got {}, {} and {}".format(
                self.source.shape[0], self.facial_map.shape[0], self.isp.shape[0]))
        sizes = {tuple(self.source.shape[1:]), tuple(self.facial_map.shape[1:]), tuple(self.isp.shape[1:])}
        if len(sizes) != 1:
            raise InvalidArgumentError("generator input parts differ in size: {}".format(sorted(sizes)))
        # examination done

    def tensor(self) -> torch.Tensor:
        return torch.cat([self.source, self.facial_map, self.isp], dim=0)


def _check_generator_input(x: torch.Tensor, g: GeneratorNet) -> None:
    if x.dim() != 4 or x.shape[1] != g.in_channels:
        raise InvalidArgumentError("the generator expects B x {} x H x W input, got {}".format(
            g.in_channels, tuple(x.shape)))
    factor = 2 ** g.num_layers
    if x.shape[2] != x.shape[3] or x.shape[2] % factor != 0 or x.shape[2] < factor:
        raise InvalidArgumentError("input size {} x {} is not a square multiple of {}".format(
            x.shape[2], x.shape[3], factor))


def generate(generator_input: Union[GeneratorInput, torch.Tensor], g: GeneratorNet) -> torch.Tensor:
    '''
    the generated image(s) in [-1, 1]: 3 x S x S for one input, B x 3 x S x S for a batch.
    '''
    x = generator_input.tensor() if isinstance(generator_input, GeneratorInput) else generator_input
    single = x.dim() == 3
    x = x[None] if single else x
    _check_generator_input(x, g)
    y = g(x)
    return y[0] if single else y


def loss_discriminator(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return torch.mean((real_scores - 1.) ** 2) + torch.mean(fake_scores ** 2)


def _mean_abs(a: Sequence[torch.Tensor], b: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(a) != len(b):
        raise InvalidArgumentError("feature lists differ in length: {} vs {}".format(len(a), len(b)))
    if len(a) == 0:
        return torch.zeros((), dtype=Config.dtype, device=Config.device)
    return sum(torch.mean(torch.abs(x - y)) for x, y in zip(a, b)) / len(a)


def generator_loss_terms(fake_scores: torch.Tensor, fake_img: torch.Tensor, real_img: torch.Tensor,
                         d_features_fake: Sequence[torch.Tensor], d_features_real: Sequence[torch.Tensor],
                         feat_extractor: nn.Module) -> Dict[str, torch.Tensor]:
    '''
    the four terms of the generator loss: adversarial, pixel-wise, perceptual and feature matching.
    '''
    if fake_img.shape != real_img.shape:
        raise InvalidArgumentError("image shapes differ: {} vs {}".format(tuple(fake_img.shape), tuple(real_img.shape)))
    fake_b = fake_img if fake_img.dim() == 4 else fake_img[None]
    real_b = real_img if real_img.dim() == 4 else real_img[None]
    return {
        "adv": torch.mean((fake_scores - 1.) ** 2),
        "pw": torch.mean(torch.abs(fake_img - real_img)),
        "perceptual": _mean_abs(feat_extractor(fake_b), feat_extractor(real_b)),
        "fm": _mean_abs(d_features_fake, [f.detach() for f in d_features_real]),
    }


def combine_generator_loss(terms: Dict, lambdas: Tuple[float, float, float] = LAMBDAS):
    lambda_pw, lambda_p, lambda_f = lambdas
    return terms["adv"] + lambda_pw * terms["pw"] + lambda_p * terms["perceptual"] + lambda_f * terms["fm"]


def loss_generator(fake_scores, fake_img, real_img, d_features_fake, d_features_real, feat_extractor,
                   lambdas: Tuple[float, float, float] = LAMBDAS) -> torch.Tensor:
    return combine_generator_loss(generator_loss_terms(fake_scores, fake_img, real_img, d_features_fake,
                                                       d_features_real, feat_extractor), lambdas)


def loss_style_photometric(gen_img: torch.Tensor, matched_style_img: torch.Tensor,
                           w: Union[WeightMask, torch.Tensor]) -> torch.Tensor:
    '''
    sum over pixels and channels of |W (I' - I_m)|, divided by the pixel count (and averaged over a batch).
    Images are (B x) C x H x W, the mask (B x) H x W.
    '''
    weights = w.as_tensor() if isinstance(w, WeightMask) else w
    if gen_img.shape != matched_style_img.shape:
        raise InvalidArgumentError("image shapes differ: {} vs {}".format(
            tuple(gen_img.shape), tuple(matched_style_img.shape)))
    if tuple(weights.shape[-2:]) != tuple(gen_img.shape[-2:]):
        raise InvalidArgumentError("mask size {} does not match image size {}".format(
            tuple(weights.shape[-2:]), tuple(gen_img.shape[-2:])))
    diff = torch.abs(weights.unsqueeze(-3) * (gen_img - matched_style_img))
    pixels = gen_img.shape[-1] * gen_img.shape[-2]
    per_image = diff.sum(dim=(-3, -2, -1)) / pixels
    return per_image.mean()


def matched_style_index(gen_landmarks, reference_set: StyleReferenceSet) -> int:
    '''
    index of the reference frame whose landmarks are nearest (mean point distance); ties go to the lowest index.
    '''
    target = Landmarks68.as_landmarks(gen_landmarks).points
    distances = [np.linalg.norm(lm.points - target, axis=-1).mean() for lm in reference_set.landmarks]
    return int(np.argmin(distances))


def retrieve_matched_style(gen_landmarks, reference_set: StyleReferenceSet) -> np.ndarray:
    if reference_set.frames is None:
        raise InvalidArgumentError("the style reference set carries no frames")
    return reference_set.frames[matched_style_index(gen_landmarks, reference_set)]


class GanBatch:
    '''
    inputs B x 18 x S x S, targets and matched style images B x 3 x S x S, weight masks B x S x S.
    The facial map channels of the inputs condition the discriminator.
    '''
    def __init__(self, inputs: torch.Tensor, targets: torch.Tensor, weights: torch.Tensor, matched: torch.Tensor):
        if not (inputs.shape[0] == targets.shape[0] == weights.shape[0] == matched.shape[0]):
            raise InvalidArgumentError("batch parts differ in batch size")
        self.inputs = inputs
        self.targets = targets
        self.weights = weights
        self.matched = matched

    @property
    def facial_maps(self) -> torch.Tensor:
        return self.inputs[:, 3:6]

    @staticmethod
    def stack(inputs: Sequence[GeneratorInput], targets: Sequence, masks: Sequence[WeightMask],
              matched: Sequence) -> GanBatch:
        def image_tensor(image):
            return image2tensor(image) if isinstance(image, np.ndarray) else np2tensor(image)
        return GanBatch(torch.stack([x.tensor() for x in inputs]), torch.stack([image_tensor(t) for t in targets]),
                        torch.stack([m.as_tensor() for m in masks]), torch.stack([image_tensor(m) for m in matched]))


def train_step_gan(batch: GanBatch, g: GeneratorNet, d: DiscriminatorNet,
                   optimizers: Tuple[torch.optim.Optimizer, torch.optim.Optimizer],
                   feat_extractor: Optional[nn.Module] = None, lambdas: Tuple[float, float, float] = LAMBDAS,
                   clip: float = GRAD_CLIP) -> Tuple[float, float]:
    '''
    one alternating update: the discriminator on L_D, then the generator on L_G + L_sp.
    optimizers = (generator optimizer, discriminator optimizer).
    '''
    opt_g, opt_d = optimizers
    feat_extractor = PerceptualPyramid() if feat_extractor is None else feat_extractor
    _check_generator_input(batch.inputs, g)
    maps = batch.facial_maps

    opt_d.zero_grad()
    with torch.no_grad():
        fake = g(batch.inputs)
    real_scores, _ = d(batch.targets, maps)
    fake_scores, _ = d(fake, maps)
    loss_d = loss_discriminator(real_scores, fake_scores)
    loss_d.backward()
    nn.utils.clip_grad_norm_(d.parameters(), clip)
    opt_d.step()

    opt_g.zero_grad()
    fake = g(batch.inputs)
    fake_scores, features_fake = d(fake, maps)
    with torch.no_grad():
        _, features_real = d(batch.targets, maps)
    terms = generator_loss_terms(fake_scores, fake, batch.targets, features_fake, features_real, feat_extractor)
    terms["sp"] = loss_style_photometric(fake, batch.matched, batch.weights)
    loss_g = combine_generator_loss(terms, lambdas) + terms["sp"]
    loss_g.backward()
    nn.utils.clip_grad_norm_(g.parameters(), clip)
    opt_g.step()
    # the generator step leaves gradients on d; the next discriminator step clears them

    logger.debug("gan step: " + ", ".join("{}={:.5g}".format(k, float(v)) for k, v in terms.items()))
    return float(loss_g.detach()), float(loss_d.detach())


def save_gan_checkpoint(path: str, g: GeneratorNet, d: Optional[DiscriminatorNet] = None) -> None:
    modules = {"generator": g}
    if d is not None:
        modules["discriminator"] = d
    save_modules(path, modules)

def load_gan_checkpoint(path: str, g: GeneratorNet, d: Optional[DiscriminatorNet] = None) -> None:
    modules = {"generator": g}
    if d is not None:
        modules["discriminator"] = d
    load_modules(path, modules)
