import numpy as np
import pytest
import torch

import stylehead
from stylehead import Config
from stylehead.face_model import canonical_face, deform_face, pose_to_image


def compare(title, expected, actual, tol=1e-9):
    '''
    max abs difference check on tensors, arrays or scalars
    '''
    if isinstance(expected, torch.Tensor):
        expected = expected.detach().cpu().numpy()
    if isinstance(actual, torch.Tensor):
        actual = actual.detach().cpu().numpy()
    max_diff = np.max(np.abs(np.asarray(expected, dtype=np.float64) - np.asarray(actual, dtype=np.float64)))
    assert max_diff <= tol, "not passed: {}, diff: {}".format(title, max_diff)


def finite_difference(fn, x: torch.Tensor, index, h=1e-6) -> float:
    '''
    central difference of the scalar fn at one entry of x
    '''
    with torch.no_grad():
        saved = x[index].item()
        x[index] = saved + h
        plus = float(fn(x))
        x[index] = saved - h
        minus = float(fn(x))
        x[index] = saved
    return (plus - minus) / (2 * h)


def check_gradient(fn, x: torch.Tensor, count=5, rel_tol=1e-4, seed=0, h=1e-6):
    '''
    compare autograd against central differences at count random entries of x
    '''
    x = x.detach().clone().requires_grad_(True)
    fn(x).backward()
    analytic = x.grad.detach().clone()
    rng = np.random.default_rng(seed)
    for flat in rng.choice(x.numel(), size=min(count, x.numel()), replace=False):
        index = np.unravel_index(int(flat), tuple(x.shape))
        numeric = finite_difference(fn, x.detach(), index, h)
        a = float(analytic[index])
        assert abs(a - numeric) <= rel_tol * max(1., abs(a), abs(numeric)), \
            "gradient at {}: autograd {} vs finite difference {}".format(index, a, numeric)


def random_landmarks(seed=0, mouth_open=0.5, eye_open=1., yaw_deg=0., shift=(0., 0.)):
    '''
    a plausible 68 x 3 image-space face on the configured canvas
    '''
    face = deform_face(canonical_face(), mouth_open, eye_open)
    rotvec = np.array([0., np.deg2rad(yaw_deg), 0.])
    rng = np.random.default_rng(seed)
    points = pose_to_image(face, rotvec, np.array([shift[0], shift[1], 0.]))
    return points + rng.normal(scale=0.2, size=points.shape) * np.array([1., 1., 0.])


def random_sequence(frames, seed=0):
    '''
    a T x 68 x 3 landmark sequence with random mouth motion and head drift
    '''
    rng = np.random.default_rng(seed)
    mouth = np.clip(np.cumsum(rng.normal(scale=0.1, size=frames)), 0., 1.2)
    yaw = np.cumsum(rng.normal(scale=0.5, size=frames))
    return np.stack([random_landmarks(seed + t, mouth[t], 1., yaw[t]) for t in range(frames)])


@pytest.fixture(autouse=True)
def fresh_config():
    '''
    every test starts from the default double precision cpu setup with a fixed seed
    '''
    stylehead.reset(seed=0, thread_num=2)
    size = Config.image_size
    yield
    Config.image_size = size
    Config.check_parameter(True)


@pytest.fixture
def small_canvas():
    Config.image_size = 64
    return 64


def check_parameter_gradient(loss_fn, parameter: torch.nn.Parameter, count=5, rel_tol=1e-4, seed=0, h=1e-6):
    '''
    the same check on a module parameter, loss_fn() takes no arguments
    '''
    parameter.grad = None
    loss_fn().backward()
    analytic = parameter.grad.detach().clone()
    rng = np.random.default_rng(seed)
    for flat in rng.choice(parameter.numel(), size=min(count, parameter.numel()), replace=False):
        index = np.unravel_index(int(flat), tuple(parameter.shape))
        with torch.no_grad():
            saved = parameter[index].item()
            parameter[index] = saved + h
            plus = float(loss_fn())
            parameter[index] = saved - h
            minus = float(loss_fn())
            parameter[index] = saved
        numeric = (plus - minus) / (2 * h)
        a = float(analytic[index])
        assert abs(a - numeric) <= rel_tol * max(1., abs(a), abs(numeric)), \
            "gradient at {}: autograd {} vs finite difference {}".format(index, a, numeric)
