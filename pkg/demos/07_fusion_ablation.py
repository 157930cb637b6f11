"""
Comparing fusion strategies on corrupted data
=============================================

Trains every fusion mode on the same corpus, where 30% of the utterances in
each modality are replaced by noise, and reports the held-out EER. One seed
takes about a minute; pass a number of seeds on the command line to average.

    python demos/07_fusion_ablation.py 3
"""

import sys
import time

import numpy as np

from avjca.features import SyntheticConfig, make_trials, synth_dataset
from avjca.model import ABLATION_MODES
from avjca.pipeline import evaluate_pipeline
from avjca.training import desk_config, fit

modes = ABLATION_MODES + ("audio", "visual")
seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 1)
results = {mode: [] for mode in modes}

for seed in seeds:
    synth = SyntheticConfig(
        speakers=20, utterances=10, L=8, d_a=16, d_v=24, noise=0.5, corrupt_audio=0.3, corrupt_visual=0.3, seed=seed
    )
    audio, visual, _ = synth_dataset(synth)
    trials = make_trials(audio, 4)
    held = {u for t in trials for u in (t.enroll, t.test)}
    train_a = [r for r in audio if r.utt_id not in held]
    train_v = [r for r in visual if r.utt_id not in held]
    for mode in modes:
        start = time.perf_counter()
        checkpoint, history = fit(train_a, train_v, trials, desk_config(mode=mode, seed=seed), audio, visual)
        eer = evaluate_pipeline(checkpoint, audio, visual, trials)
        results[mode].append(eer.eer)
        print(f"seed {seed} {mode:<12} {eer.line()}  best epoch {checkpoint.epoch}/{len(history)}  {time.perf_counter() - start:.1f}s")

print("\nmean EER over", len(seeds), "seed(s)")
for mode in modes:
    print(f"  {mode:<12} {100 * np.mean(results[mode]):6.2f}%")
