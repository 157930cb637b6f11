"""
Training, early stopping and checkpoints
========================================

Trains the full joint cross-attention model on a small corpus, keeps the
epoch with the lowest validation EER and saves it to a binary checkpoint.
"""

import io
import logging

from avjca.features import SyntheticConfig, make_trials, synth_dataset
from avjca.pipeline import evaluate_pipeline
from avjca.training import desk_config, encode_model, fit, format_history, load_model, save_model

logging.basicConfig(level=logging.INFO, format="  %(message)s")

audio, visual, _ = synth_dataset(SyntheticConfig(speakers=8, utterances=6, L=8, d_a=16, d_v=24, noise=0.5, seed=5))

# The last two utterances of each speaker are held out and paired into trials;
# training never sees them.
trials = make_trials(audio, 2)
held = {u for t in trials for u in (t.enroll, t.test)}
train_a = [r for r in audio if r.utt_id not in held]
train_v = [r for r in visual if r.utt_id not in held]

# desk_config is a preset for corpora of this size; TrainConfig() holds the full-scale defaults.
config = desk_config(mode="jca", max_epochs=15, patience=5)
print("config:", ", ".join(config.to_lines()))
checkpoint, history = fit(train_a, train_v, trials, config, audio, visual)
print("epoch loss val_eer\n" + format_history(history), end="")
print(f"kept epoch {checkpoint.epoch} with validation EER {100 * checkpoint.val_eer:.2f}%")

# Checkpoints are byte-for-byte reproducible and load back to the same model.
buf = io.BytesIO()
size = save_model(checkpoint, buf)
buf.seek(0)
restored = load_model(buf)
print(f"checkpoint: {size} bytes, {len(checkpoint.params)} tensors")
print("reloaded model scores the same:", evaluate_pipeline(restored, audio, visual, trials) == evaluate_pipeline(checkpoint, audio, visual, trials))

rerun, _ = fit(train_a, train_v, trials, config, audio, visual)
print("retraining with the same seed gives identical bytes:", encode_model(rerun) == encode_model(checkpoint))
