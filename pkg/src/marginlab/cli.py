"""Single executable exposing the full pipeline.

Subcommands: ``gen-data``, ``train``, ``eval``, ``grad-check``,
``loss-probe``, ``diag``. Every configuration key can come from a
``key = value`` file (``--config``) or from the matching kebab-case flag;
flags win. Exit codes: 0 success, 2 configuration errors, 3 path errors,
4 numerical failures.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import losses, report
from .config import (
    KEYS,
    PRESETS,
    RunConfig,
    build_config,
    load_config_file,
    margin_config,
    parse_value,
    synthetic_spec,
    train_config,
    write_effective_config,
)
from .data import (
    dataset_from_store,
    generate_synthetic,
    load_embeddings,
    load_split,
    load_trials,
    make_trials,
    nearest_centroid_accuracy,
    save_embeddings,
    write_split,
    write_trials,
)
from .errors import ConfigError, MarginLabError, NumericalError, ParseError
from .evaluation import compute_eer, det_points, score_trials, write_det_csv, write_scores_csv
from .losses import VARIANTS, LabeledLogits, MarginConfig
from .model import encoder_forward, init_model, load_checkpoint, model_forward, save_checkpoint
from .train import train, whole_model_grad_check, write_history_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PATH = 3
EXIT_NUMERIC = 4

GRAD_TOLERANCE = 1e-4


def _data_dir(cfg: RunConfig) -> str:
    return cfg.data_dir or cfg.out_dir


def _checkpoint_path(cfg: RunConfig) -> str:
    return cfg.checkpoint or os.path.join(_data_dir(cfg), "checkpoint.txt")


def _trials_path(cfg: RunConfig) -> str:
    return cfg.trials or os.path.join(_data_dir(cfg), "trials.txt")


def _prepare_out_dir(cfg: RunConfig, command: str) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    echo = os.path.join(cfg.out_dir, f"effective_config_{command.replace('-', '_')}.txt")
    write_effective_config(cfg, echo)


def _load_dataset(cfg: RunConfig):
    base = _data_dir(cfg)
    store = load_embeddings(os.path.join(base, "features.txt"))
    split = load_split(os.path.join(base, "splits.txt"))
    return dataset_from_store(store, split)


def cmd_gen_data(cfg: RunConfig, args) -> int:
    spec = synthetic_spec(cfg)
    if cfg.num_target_trials < 0 or cfg.num_nontarget_trials < 0:
        raise ConfigError("trial counts must be non-negative")
    _prepare_out_dir(cfg, "gen-data")
    dataset = generate_synthetic(spec)
    trials = make_trials(dataset, cfg.num_target_trials, cfg.num_nontarget_trials,
                         cfg.trial_seed)
    save_embeddings(os.path.join(cfg.out_dir, "features.txt"),
                    dataset.utt_ids, dataset.labels, dataset.features)
    write_split(os.path.join(cfg.out_dir, "splits.txt"), dataset.utt_ids, dataset.heldout)
    write_trials(os.path.join(cfg.out_dir, "trials.txt"), trials)
    acc = nearest_centroid_accuracy(dataset)
    print(f"generated {len(dataset.utt_ids)} utterances from {spec.num_speakers} speakers "
          f"(seed {spec.seed})")
    print(f"trials: {cfg.num_target_trials} target, {cfg.num_nontarget_trials} nontarget "
          f"(seed {cfg.trial_seed})")
    print(f"nearest-centroid heldout accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    tcfg = train_config(cfg)
    dataset = _load_dataset(cfg)
    _prepare_out_dir(cfg, "train")
    d_in = dataset.features.shape[1]
    params, weights = init_model(d_in, cfg.hidden_dim, cfg.embedding_dim,
                                 dataset.num_speakers, cfg.init_seed)
    params, weights, history = train(dataset, params, weights, tcfg)
    save_checkpoint(os.path.join(cfg.out_dir, "checkpoint.txt"), params, weights,
                    seed=cfg.init_seed, step=history.steps)
    write_history_csv(os.path.join(cfg.out_dir, "history.csv"), history)
    if cfg.figures:
        report.save_history_figure(history, os.path.join(cfg.out_dir, "history.png"))
    print(f"trained {history.steps} steps with loss variant {tcfg.loss.variant!r}")
    print(f"final epoch: mean_loss={history.mean_loss[-1]:.6f} "
          f"train_acc={history.train_acc[-1]:.4f}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    checkpoint = load_checkpoint(_checkpoint_path(cfg))
    base = _data_dir(cfg)
    store = load_embeddings(os.path.join(base, "features.txt"))
    trials = load_trials(_trials_path(cfg))
    _prepare_out_dir(cfg, "eval")
    embeddings, _ = encoder_forward(checkpoint.params, store.vectors)
    emb_path = os.path.join(cfg.out_dir, "embeddings.txt")
    save_embeddings(emb_path, store.ids, store.speakers, embeddings)
    scored = score_trials(load_embeddings(emb_path), trials)
    result = compute_eer(scored)
    points = det_points(scored)
    write_scores_csv(os.path.join(cfg.out_dir, "scores.csv"), scored)
    write_det_csv(os.path.join(cfg.out_dir, "det.csv"), points)
    if cfg.figures:
        report.save_det_figure(points, result, os.path.join(cfg.out_dir, "det.png"))
    print(f"EER: {100.0 * result.eer:.3f}%")
    print(f"threshold: {result.threshold:.6f} "
          f"({result.num_target} target / {result.num_nontarget} nontarget trials)")
    return EXIT_OK


def _seeded_logits(rng: np.random.Generator, n: int, c: int) -> LabeledLogits:
    """Batch whose softmax entries are either dominant or deeply suppressed.

    At scale 30 an entry whose gap to the row maximum falls in a middle band
    has a gradient too small for double-precision finite differences to
    resolve but too large for the absolute-error fallback; keeping every
    logit near the top or far below it keeps the check meaningful.
    """
    logits = np.empty((n, c))
    for i in range(n):
        top = rng.uniform(0.5, 0.9)
        near = rng.random(c) < 0.5
        logits[i] = np.where(near,
                             top - rng.uniform(0.0, 0.15, size=c),
                             top - rng.uniform(0.9, 1.6, size=c))
    labels = rng.integers(0, c, size=n)
    return LabeledLogits(np.clip(logits, -1.0, 1.0), labels)


def _corrupted_error(data: LabeledLogits, mcfg: MarginConfig, eps: float) -> float:
    """Finite-difference disagreement after deliberately corrupting one
    analytic gradient entry (failure-path testing hook)."""
    z = data.logits.copy()
    y = data.labels
    corrupted = losses.raw_loss_grad(z, y, mcfg)[0, 0] + 0.05
    orig = z[0, 0]
    z[0, 0] = orig + eps
    plus = losses.raw_loss_value(z, y, mcfg)
    z[0, 0] = orig - eps
    minus = losses.raw_loss_value(z, y, mcfg)
    fd = (plus - minus) / (2.0 * eps)
    return abs(corrupted - fd) if abs(corrupted) < 1e-8 else abs(corrupted - fd) / abs(corrupted)


def cmd_grad_check(cfg: RunConfig, args) -> int:
    eps = cfg.grad_eps
    rng = np.random.default_rng(20240501)
    data = _seeded_logits(rng, 5, 7)
    # The hinged loss is flat on one side of the margin; keep the batch clear
    # of the hinge so central differences see a consistent branch.
    attempts = 0
    while losses.margin_gap_clearance(data.logits, data.labels, cfg.m) <= 10.0 * eps:
        data = _seeded_logits(rng, 5, 7)
        attempts += 1
        if attempts > 50:  # pragma: no cover
            raise NumericalError("could not build a hinge-clear batch")

    feat_rng = np.random.default_rng(20240502)
    feats = feat_rng.normal(size=(6, 6))
    model_labels = feat_rng.integers(0, 4, size=6)
    params, weights = init_model(6, 8, 5, 4, seed=99)

    failed = False
    print(f"{'variant':<16} {'loss-grad':>12} {'model-grad':>12}  status")
    for index, variant in enumerate(VARIANTS):
        mcfg = MarginConfig(variant, cfg.m, cfg.s, cfg.floor_mode)
        loss_err = losses.loss_gradient_check(data, mcfg, eps=eps)
        model_err = whole_model_grad_check(feats, model_labels, params, weights,
                                           mcfg, eps=eps)
        note = ""
        if args.inject_gradient_error and index == 0:
            loss_err = max(loss_err, _corrupted_error(data, mcfg, eps))
            note = "  (corrupted by --inject-gradient-error)"
        ok = loss_err <= GRAD_TOLERANCE and model_err <= GRAD_TOLERANCE
        failed = failed or not ok
        print(f"{variant:<16} {loss_err:>12.3e} {model_err:>12.3e}  "
              f"{'PASS' if ok else 'FAIL'}{note}")
    if failed:
        print("gradient check failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_loss_probe(cfg: RunConfig, args) -> int:
    if not cfg.probe_variants or not cfg.probe_m or not cfg.probe_s:
        raise ConfigError("probe grid needs at least one variant, margin and scale")
    for variant in cfg.probe_variants:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown probe variant {variant!r}")
    if cfg.delta_step <= 0.0:
        raise ConfigError(f"delta_step must be > 0, got {cfg.delta_step}")
    if cfg.delta_min > cfg.delta_max:
        raise ConfigError("delta_min must not exceed delta_max")
    if cfg.delta_min < -2.0 or cfg.delta_max > 2.0:
        raise ConfigError("delta range must lie within [-2, 2] (cosine gap bound)")
    deltas = np.arange(cfg.delta_min, cfg.delta_max + 0.5 * cfg.delta_step, cfg.delta_step)
    if deltas.size == 0:
        raise ConfigError("empty delta grid")
    _prepare_out_dir(cfg, "loss-probe")
    rows = []
    for variant in cfg.probe_variants:
        for m in cfg.probe_m:
            for s in cfg.probe_s:
                mcfg = MarginConfig(variant, m, s, cfg.floor_mode)
                for delta in deltas:
                    sample = LabeledLogits(np.array([[delta / 2.0, -delta / 2.0]]),
                                           np.array([0]))
                    rows.append((variant, m, s, float(delta),
                                 losses.evaluate(sample, mcfg).value))
    csv_path = os.path.join(cfg.out_dir, "loss_probe.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("variant,m,s,delta,loss\n")
        for variant, m, s, delta, value in rows:
            fh.write(f"{variant},{m:.17g},{s:.17g},{delta:.17g},{value:.17g}\n")
    if cfg.figures:
        report.save_probe_figure(rows, os.path.join(cfg.out_dir, "loss_probe.png"))
    print(f"wrote {len(rows)} probe rows to {csv_path}")
    return EXIT_OK


def cmd_diag(cfg: RunConfig, args) -> int:
    checkpoint = load_checkpoint(_checkpoint_path(cfg))
    dataset = _load_dataset(cfg)
    _prepare_out_dir(cfg, "diag")
    idx = dataset.train_indices
    logits, _ = model_forward(checkpoint.params, checkpoint.class_weights,
                              dataset.features[idx])
    data = LabeledLogits(logits, dataset.labels[idx])
    rep = losses.hardness_report(data, margin_config(cfg),
                                 easy_threshold=cfg.easy_threshold,
                                 hard_threshold=cfg.hard_threshold)
    csv_path = os.path.join(cfg.out_dir, "diag.csv")
    labels = rep.labels
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("utt,posterior,set,approx_error\n")
        for row, gidx in enumerate(idx):
            name = labels[row]
            if name == "easy":
                err = rep.easy_error[row]
            elif name == "hard":
                err = rep.hard_error[row]
            else:
                err = min(rep.easy_error[row], rep.hard_error[row])
            fh.write(f"{dataset.utt_ids[gidx]},{rep.posterior[row]:.17g},{name},{err:.17g}\n")
    if cfg.figures:
        report.save_posterior_figure(rep, cfg.easy_threshold, cfg.hard_threshold,
                                     os.path.join(cfg.out_dir, "diag.png"))
    n_easy = int(rep.easy.sum())
    n_hard = int(rep.hard.sum())
    print(f"samples: {len(labels)} total, {n_easy} easy, {n_hard} hard, "
          f"{len(labels) - n_easy - n_hard} unclassified")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
    "loss-probe": cmd_loss_probe,
    "diag": cmd_diag,
}

_FLAG_HELP = {
    "loss": f"loss variant: one of {', '.join(VARIANTS)}",
    "m": "additive margin on the cosine scale",
    "s": "logit scale (temperature)",
    "floor_mode": "hinged-loss floor: literal (log C when satisfied) or zero_floor",
    "out_dir": "directory for all outputs (created if missing)",
    "data_dir": "directory holding features.txt/splits.txt (default: out-dir)",
    "checkpoint": "checkpoint file to evaluate (default: <data-dir>/checkpoint.txt)",
    "trials": "trial list file (default: <data-dir>/trials.txt)",
    "figures": "render PNG figures next to the CSV outputs (true/false)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marginlab",
        description="Margin-softmax loss laboratory: synthetic speaker data, "
                    "embedding training, cosine/EER evaluation and loss diagnostics.",
        epilog="Scores at or above the decision threshold count as accepts. "
               "Exit codes: 0 ok, 2 config error, 3 path error, 4 numerical failure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "gen-data": "generate a synthetic speaker dataset plus trial list",
        "train": "train the embedding encoder on a generated dataset",
        "eval": "score trials with a trained checkpoint and report EER",
        "grad-check": "verify analytic gradients of every loss variant",
        "loss-probe": "tabulate the loss surface over a target/non-target gap grid",
        "diag": "partition training samples into easy/hard sets",
    }
    for name, desc in descriptions.items():
        cmd = sub.add_parser(name, help=desc, description=desc)
        cmd.add_argument("--config", metavar="PATH",
                         help="key = value configuration file")
        cmd.add_argument("--loss-preset", choices=sorted(PRESETS),
                         help="apply a shipped (margin, scale) preset before other overrides")
        if name == "grad-check":
            cmd.add_argument("--inject-gradient-error", action="store_true",
                             help="deliberately corrupt one analytic gradient entry "
                                  "(failure-path testing hook)")
        for key in KEYS:
            cmd.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="V",
                             default=None, help=_FLAG_HELP.get(key, argparse.SUPPRESS))
    return parser


def _config_from_args(args) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else None
    overrides = {}
    for key in KEYS:
        raw = getattr(args, key)
        if raw is not None:
            overrides[key] = parse_value(key, raw)
    return build_config(file_values, overrides, preset=args.loss_preset)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ParseError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PATH
    except MarginLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
