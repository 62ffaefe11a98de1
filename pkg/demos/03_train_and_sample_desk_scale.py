"""Train a small head-pose model on synthetic data and sample from it.

The synthetic dataset pairs a smooth random audio-feature process with
motion that is a known sinusoidal function of audio loudness and frame
index, so generated output can be scored against recomputable ground
truth. This cut-down run (60 sequences, ~2 minutes on one laptop core)
reaches a normalized error around 0.15; the acceptance-scale run (200
sequences, 50 epochs) reaches below 0.05.
"""

import numpy as np

from facemotion import (SamplerConfig, SyntheticSpec, build_schedule,
                        make_synthetic_dataset, sample_chunk, TrainConfig,
                        train_component)
from facemotion.datakit import oracle_from_manifest
from facemotion.denoiser import DenoiserConfig
from facemotion.sequences import AudioFeatureSequence
from facemotion.training import split_indices

spec = SyntheticSpec(n_sequences=60, frames_per_sequence=300, d_audio=8,
                     component_tag="pose", oracle_gain=1.6,
                     oracle_frequencies=(0.04,), noise_sigma=0.01, seed=11)
dataset = make_synthetic_dataset(spec, "/tmp/facemotion_demo_pose")
print(f"dataset: {len(dataset)} sequences of {spec.frames_per_sequence} frames")

cfg = TrainConfig(component_tag="pose", epochs=60, batch_size=16,
                  learning_rate=2e-3, window_len=100, T=500, seed=3)
net = DenoiserConfig(d_motion=6, d_audio=8, d_model=32, n_layers=8, n_heads=8,
                     max_frames=100, audio_encoder_layers=2)
params, log = train_component(cfg, dataset, net=net)
print(f"trained {len(log.rows)} steps;"
      f" loss {log.rows[0][2]:.3f} -> {log.rows[-1][2]:.3f}")

# sample a window for each held-out sequence, conditioned on its true
# starting pose, and compare against the recomputed noiseless oracle
sched = build_schedule(cfg.T)
sampler = SamplerConfig(mode="ddim", ddim_steps=25, chunk_len=100, seed=99)
_, val_idx = split_indices(len(dataset.pairs), 0.1, cfg.seed)
start = 6
errs = []
for i in val_idx:
    motion, audio = dataset.pairs[i]
    window = AudioFeatureSequence(audio.features[start:start + 100],
                                  fps=audio.fps)
    generated = sample_chunk(params, window, motion.frames[start:start + 1],
                             sched, sampler)
    oracle = oracle_from_manifest(dataset.manifest, window, start_index=start)
    errs.append(np.mean(((generated.frames - oracle) / params.norm_std) ** 2))
print(f"held-out sampled-output MSE vs oracle (normalized): {np.mean(errs):.4f}"
      f" over {len(val_idx)} sequences")
