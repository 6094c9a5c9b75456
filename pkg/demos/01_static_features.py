"""Static prosodic features of a synthetic utterance.

A 1.2 s harmonic tone with a pitch glide and a loudness swell stands in for
speech. We frame it at 25 ms / 10 ms and look at the four tracks the
dynamic-feature extractor later differentiates.
"""
import numpy as np

from sere import dsp

sr = 16000
t = np.arange(int(1.2 * sr)) / sr

# pitch rises from 140 to 260 Hz, then jumps down to 180 Hz at 0.8 s
f0 = np.where(t < 0.8, 140 + 150 * t, 180.0)
phase = 2 * np.pi * np.cumsum(f0) / sr
x = sum(np.sin(k * phase) / k for k in range(1, 6))
x *= 0.2 + 0.6 * np.exp(-((t - 0.5) / 0.2) ** 2)

audio = dsp.decode_wav(dsp.encode_wav(x / np.max(np.abs(x)) * 0.9, sr))
feats = dsp.extract_static(audio)
print("frames x features:", feats.shape)

grid = dsp.FeatureConfig().grid_for(audio)
centres = (np.arange(grid.num_frames) * grid.hop_length + grid.frame_length / 2) / sr
print(" time   F0(Hz)  true   RMS    c2     centroid")
for k in range(0, len(feats), 10):
    f, e, c2, cen = feats[k]
    true = 140 + 150 * centres[k] if centres[k] < 0.8 else 180.0
    print(f"{centres[k]:5.2f}  {f:6.1f}  {true:5.1f}  {e:.3f}  {c2:6.2f}  {cen:7.1f}")

# the 0.8 s pitch jump is the largest first difference of the F0 track
jump = np.argmax(np.abs(np.diff(feats[:, 0]))) + 1
print(f"largest F0 change at frame {jump} (t = {centres[jump]:.2f} s)")
