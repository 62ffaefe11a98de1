"""Generate a sequence longer than one window by recursive chunking.

Each 100-frame chunk is conditioned on the last generated frame of the
previous chunk, which is what keeps the assembled sequence coherent; the
seam diagnostic compares frame-to-frame jumps at chunk boundaries against
the rest of the sequence (1.0 = seams indistinguishable).

Uses untrained models: the point here is the plumbing, not motion quality.
"""

import numpy as np

from facemotion import (SamplerConfig, build_schedule, generate_long,
                        seam_discontinuity, split_components)
from facemotion.denoiser import DenoiserConfig, init_denoiser
from facemotion.sequences import AudioFeatureSequence


def model(d_motion, seed):
    cfg = DenoiserConfig(d_motion=d_motion, d_audio=8, d_model=32, n_layers=2,
                         n_heads=4, max_frames=100, audio_encoder_layers=1)
    return init_denoiser(cfg, seed=seed)


lips, expr, pose = model(13, 1), model(51, 2), model(6, 3)
sched = build_schedule(500)
cfg = SamplerConfig(mode="ddim", ddim_steps=25, chunk_len=100, seed=7)

rng = np.random.default_rng(0)
audio = AudioFeatureSequence(rng.standard_normal((350, 8)))
identity = rng.standard_normal((1, 70)) * 0.1

trace = []
out = generate_long(lips, expr, pose, audio, identity, sched, cfg, trace=trace)
print(f"audio frames: {audio.n_frames} -> generated {out.n_frames} frames"
      f" in {len(trace) // 3} chunks of {cfg.chunk_len}")

for entry in trace[:6]:
    cond = entry["condition"]
    print(f"  chunk {entry['chunk']} {entry['component']:10s} conditioned on"
          f" frame with rms {np.sqrt(np.mean(cond ** 2)):.3f}")

print(f"seam ratio (full): {seam_discontinuity(out, cfg.chunk_len):.3f}")
for name, part in zip(("lips", "expression", "pose"),
                      split_components(out.frames)):
    from facemotion.sequences import MotionSequence
    seq = MotionSequence(part, component_tag=name)
    print(f"seam ratio ({name}): {seam_discontinuity(seq, cfg.chunk_len):.3f}")
