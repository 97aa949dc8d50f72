from .config import Config
from .global_method import get_config, reset
from .errors import StyleHeadError, InvalidArgumentError, SingularWarpError, EmptyMapError, DegenerateRegionError
from .errors import PreconditionError, DatasetValidationError, DatasetIOError

# landmarks, poses and the synthetic face
from .geometry import Landmarks68, KeypointSet, PoseParams, HeadPose, LandmarkSequence
from .geometry import recompose, vectorize_landmarks, unvectorize_landmarks
from .geometry import save_landmark_sequence, load_landmark_sequence
from .face_model import canonical_face, deform_face, pose_to_image, estimate_head_pose

# audio encoding and intermediate motion
from .audio import AudioClip, MelSpectrogram, AudioFeatureSequence, APCModel
from .audio import read_wav, write_wav, compute_log_mel, apc_encode, align_audio_to_video
from .motion import MotionGenerator, PoseHistory, GaussianPrediction, DisplacementSequence
from .motion import mouth_eye_forward, head_pose_predict, head_pose_sample, rollout_head_pose
from .motion import loss_me, loss_ht, loss_mg

# the style-aware talking head generator
from .stylemap import MotionTemplate, StyleReferenceSet, ISPSet, StyleMapper
from .stylemap import default_templates, select_style_references, disentangle, warp_features, build_isp
from .facialmap import FacialMap, WeightMask, rasterize_facial_map, build_weight_mask
from .renderer import GeneratorNet, DiscriminatorNet, GeneratorInput, generate
from .renderer import loss_discriminator, loss_generator, loss_style_photometric, train_step_gan

# style transfer
from .transfer import StyleTransferNet, TransferConfig, TransferModels, run_transfer
from .transfer import loss_constraint, loss_regularizer, loss_transfer, interpolate

from . import metrics
from .dataharness import SyntheticStyle, synth_generate, load_dataset
from .run_config import RunConfig, load_run_config
