"""facemotion: diffusion toolkit for audio-conditioned facial motion sequences."""

__version__ = "0.1.0"

from .sequences import AudioFeatureSequence, COMPONENT_DIMS, MotionSequence
from .diffusion import (DiffusionState, NoiseSchedule, ancestral_step,
                        build_schedule, ddim_step, ddim_timesteps, derive_epsilon,
                        forward_sample, forward_step)
from .denoiser import (ConditionBundle, DenoiserConfig, DenoiserParams, denoise,
                       efficient_attention, embed_timestep, encode_audio,
                       encode_identity, init_denoiser)
from .training import (TrainConfig, TrainState, diffusion_loss, first_frame_loss,
                       total_loss, train_component, train_step)
from .sampling import (SamplerConfig, assemble_components, default_component_map,
                       generate_long, sample_chunk, split_components)
from .metrics import (LandmarkSequence, SimilarityTransform, ahd, kabsch_umeyama,
                      lmd, seam_discontinuity)
from .datakit import (SyntheticSpec, load_checkpoint, load_dataset,
                      make_synthetic_dataset, read_audio_features, read_motion,
                      resample_to_fps, save_checkpoint, write_audio_features,
                      write_motion)
