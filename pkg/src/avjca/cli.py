"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 contract violation.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Sequence

from .errors import ContractError, FormatError
from .features import (
    SyntheticConfig,
    make_trials,
    read_features,
    read_trials,
    synth_dataset,
    write_features,
    write_scores,
    write_trials,
)
from .metrics import compute_eer
from .model import ABLATION_MODES, MODE_CODES, MODES
from .pipeline import embed_utterances, evaluate_pipeline, trial_scores
from .training import (
    TrainConfig,
    encode_avsm,
    fit,
    format_history,
    load_model,
    parse_config,
    save_model,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def default_holdout(utterances: int) -> int:
    """Utterances per speaker reserved for trials by ``synth``."""
    return max(2, (2 * utterances) // 5)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="avjca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("synth", help="generate a synthetic two-modality corpus and trial list")
    p.add_argument("--out", required=True, help="output directory (audio.avfv, visual.avfv, trials.txt)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speakers", type=int, default=20)
    p.add_argument("--utts", type=int, default=10)
    p.add_argument("--segments", type=int, default=8)
    p.add_argument("--dim-audio", type=int, default=16)
    p.add_argument("--dim-visual", type=int, default=24)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--corrupt-audio", type=float, default=0.0)
    p.add_argument("--corrupt-visual", type=float, default=0.0)

    def data_flags(p, trials=True):
        p.add_argument("--audio", required=True)
        p.add_argument("--visual", required=True)
        if trials:
            p.add_argument("--trials", required=True)

    def train_flags(p):
        p.add_argument("--config")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--seed", type=int)
        p.add_argument("--fusion-weight", type=float)

    p = subs.add_parser("train", help="train a model; utterances named in --trials are held out for validation")
    data_flags(p)
    train_flags(p)
    p.add_argument("--model", required=True, help="output checkpoint (AVSM)")
    p.add_argument("--out", help="history file (default: <model>.history.txt)")

    p = subs.add_parser("embed", help="write utterance embeddings as an AVSM tensor container")
    data_flags(p, trials=False)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = subs.add_parser("score", help="score a trial list")
    data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--scores", required=True, help="output score file")
    p.add_argument("--fusion-weight", type=float)

    p = subs.add_parser("eer", help="EER of a score file against a labelled trial list")
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", required=True)

    p = subs.add_parser("ablate", help="train and evaluate every fusion mode on the same data")
    data_flags(p)
    train_flags(p)
    return parser


def _config(args, audio, visual) -> TrainConfig:
    config = parse_config(args.config) if args.config else TrainConfig()
    overrides = {"d_a": audio[0].d, "d_v": visual[0].d, "L": audio[0].L}
    for flag, key in (("mode", "mode"), ("seed", "seed"), ("fusion_weight", "fusion_weight")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    config = config.replace(**overrides)
    config.validate()
    return config


def _load_data(args):
    audio, visual = read_features(args.audio), read_features(args.visual)
    if not audio or not visual:
        raise FormatError("feature files contain no records")
    if {r.modality for r in audio} != {"audio"} or {r.modality for r in visual} != {"visual"}:
        raise FormatError("--audio/--visual files hold the wrong modality")
    return audio, visual


def _train_split(audio, visual, trials):
    held = {u for t in trials for u in (t.enroll, t.test)}
    return [r for r in audio if r.utt_id not in held], [r for r in visual if r.utt_id not in held]


def cmd_synth(args) -> None:
    config = SyntheticConfig(
        speakers=args.speakers,
        utterances=args.utts,
        L=args.segments,
        d_a=args.dim_audio,
        d_v=args.dim_visual,
        noise=args.noise,
        corrupt_audio=args.corrupt_audio,
        corrupt_visual=args.corrupt_visual,
        seed=args.seed,
    )
    audio, visual, _ = synth_dataset(config)
    os.makedirs(args.out, exist_ok=True)
    write_features(audio, os.path.join(args.out, "audio.avfv"))
    write_features(visual, os.path.join(args.out, "visual.avfv"))
    write_trials(make_trials(audio, default_holdout(args.utts)), os.path.join(args.out, "trials.txt"))


def cmd_train(args) -> None:
    audio, visual = _load_data(args)
    trials = read_trials(args.trials)
    config = _config(args, audio, visual)
    train_a, train_v = _train_split(audio, visual, trials)
    checkpoint, history = fit(train_a, train_v, trials, config, audio, visual)
    save_model(checkpoint, args.model)
    with open(args.out or args.model + ".history.txt", "w", encoding="utf-8", newline="\n") as f:
        f.write(format_history(history))


def cmd_embed(args) -> None:
    model = load_model(args.model)
    audio, visual = _load_data(args)
    embs = embed_utterances(model, audio, visual)
    meta = [f"mode={model.config.mode}", f"embed_dim={model.config.embed_dim}"]
    with open(args.out, "wb") as f:
        f.write(encode_avsm(MODE_CODES[model.config.mode], embs, meta))


def cmd_score(args) -> None:
    model = load_model(args.model)
    if args.fusion_weight is not None:
        model.config = model.config.replace(fusion_weight=args.fusion_weight)
        model.config.validate()
    audio, visual = _load_data(args)
    trials = read_trials(args.trials)
    needed = list(dict.fromkeys(u for t in trials for u in (t.enroll, t.test)))
    embs = embed_utterances(model, audio, visual, needed)
    write_scores(trial_scores(model, embs, trials), args.scores)


def cmd_eer(args) -> None:
    from .features import read_scores

    trials = read_trials(args.trials)
    scored = {(e, t): s for e, t, s in read_scores(args.scores)}
    values = []
    for lineno, t in enumerate(trials, 1):
        if (t.enroll, t.test) not in scored:
            raise FormatError(f"trial line {lineno}: no score for {t.enroll} {t.test}")
        values.append(scored[(t.enroll, t.test)])
    print(compute_eer(values, [t.label for t in trials]).line())


def cmd_ablate(args) -> None:
    audio, visual = _load_data(args)
    trials = read_trials(args.trials)
    base = _config(args, audio, visual)
    train_a, train_v = _train_split(audio, visual, trials)
    for mode in ABLATION_MODES:
        checkpoint, _ = fit(train_a, train_v, trials, base.replace(mode=mode), audio, visual)
        print(f"{mode} {evaluate_pipeline(checkpoint, audio, visual, trials).line()}", flush=True)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "embed": cmd_embed,
    "score": cmd_score,
    "eer": cmd_eer,
    "ablate": cmd_ablate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"avjca: usage error: {exc}", file=sys.stderr)
        return 1
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except FormatError as exc:
        print(f"avjca: format error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"avjca: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"avjca: contract violation: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
