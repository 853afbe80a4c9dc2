"""Command-line entry point: gen-data, train, eval, baseline.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import os

# Single-threaded BLAS keeps float reductions, and therefore checkpoints, bit-reproducible.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import dataclasses  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

from . import net  # noqa: E402
from .audio import save_wav, read_manifest, write_manifest  # noqa: E402
from .config import SEED_ENV, RunConfig, build_config, parse_value, read_config_file  # noqa: E402
from .errors import AudioNavError, ConfigError, UsageError  # noqa: E402
from .evaluation import (  # noqa: E402
    RANDOM,
    run_eval,
    run_few_shot_experiment,
    read_report,
    run_pitch_shift_eval,
    summarize,
    write_report,
    write_summary,
)
from .pipeline import Dataset, EnvFactory, build_dataset, train_agent  # noqa: E402
from .seeding import derive_seed  # noqa: E402

log = logging.getLogger("audionav")

MANIFEST = "manifest.tsv"
FINAL = "final.bin"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# flag dest -> config key; every flag except --config and --set maps to exactly one key.
FLAG_KEYS = {
    "seed": "seed", "out": "paths.out", "preset": "preset", "total_steps": "ppo.total_steps",
    "resume": "train.resume", "all_targets": "train.all_targets", "wav": "data.export_wav",
    "policy": "eval.policy", "pitch_shift": "eval.pitch_shift", "episodes": "eval.n_episodes",
    "few_shot": "eval.few_shot", "checkpoint": "eval.checkpoint", "stochastic": "eval.deterministic",
    "target_rotation": "eval.target_rotation", "baseline_episodes": "eval.baseline_episodes",
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--seed", metavar="N", help=f"master seed (default: ${SEED_ENV}, else 0)")
    common.add_argument("--out", metavar="DIR", help="output root directory")
    common.add_argument("--preset", choices=("desk", "paper"), help="training schedule preset")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    parser = _Parser(prog="audionav", description="Audio-only navigation with PPO.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    g = sub.add_parser("gen-data", parents=[common], help="synthesize utterance pools and write a manifest")
    g.add_argument("--wav", action="store_const", const="true", help="also export WAV files")
    t = sub.add_parser("train", parents=[common], help="train an agent")
    t.add_argument("--resume", action="store_const", const="true", help="resume from the last training state")
    t.add_argument("--total-steps", metavar="N", help="environment steps to train for")
    t.add_argument("--all-targets", action="store_const", const="true", help="train one agent per target")
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--policy", choices=("trained", "random"))
    e.add_argument("--pitch-shift", metavar="MIN:MAX", help="pitch-shift test utterances by MIN..MAX percent")
    e.add_argument("--episodes", metavar="N", help="episodes per evaluation block (default 100)")
    e.add_argument("--few-shot", action="store_const", const="true",
                   help="also train and evaluate an agent on few utterances per speaker")
    e.add_argument("--checkpoint", metavar="PATH", help="parameter file (default <out>/checkpoints/final.bin)")
    e.add_argument("--stochastic", action="store_const", const="false", help="sample actions instead of the mean")
    e.add_argument("--target-rotation", action="store_const", const="true",
                   help="evaluate once per target speaker (needs train --all-targets)")
    b = sub.add_parser("baseline", parents=[common], help="evaluate the random policy")
    b.add_argument("--episodes", dest="baseline_episodes", metavar="N", help="episodes (default 500)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {}
    if args.seed is None and "seed" not in file_values and os.environ.get(SEED_ENV):
        overrides["seed"] = parse_value("seed", os.environ[SEED_ENV])
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = parse_value(key.strip(), value.strip())
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = parse_value(key, value)
    return build_config(file_values, overrides)


def load_dataset(cfg: RunConfig) -> Dataset:
    """Pools from the manifest in the data directory, or synthesized from the seed if there is none."""
    manifest = cfg.data_dir / MANIFEST
    if not manifest.exists():
        log.info("no manifest at %s; synthesizing pools", manifest)
        return build_dataset(cfg.profiles, cfg.n_train, cfg.n_test, derive_seed(cfg.seed, "data"),
                             cfg.room.sample_rate)
    pools = read_manifest(manifest, cfg.profiles, cfg.room.sample_rate)
    try:
        return Dataset([pools[p.speaker_id]["train"] for p in cfg.profiles],
                       [pools[p.speaker_id]["test"] for p in cfg.profiles])
    except KeyError as exc:
        raise ConfigError("paths.data", f"manifest {manifest} lacks pools for {exc}") from None


def cmd_gen_data(cfg: RunConfig) -> int:
    data = build_dataset(cfg.profiles, cfg.n_train, cfg.n_test, derive_seed(cfg.seed, "data"), cfg.room.sample_rate)
    cfg.data_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(data.train + data.test, cfg.data_dir / MANIFEST)
    if cfg.export_wav:
        for pool in data.train + data.test:
            wav_dir = cfg.data_dir / "wav" / pool.speaker_id
            wav_dir.mkdir(parents=True, exist_ok=True)
            for i, clip in enumerate(pool.clips):
                save_wav(clip, wav_dir / f"{pool.partition}_{i:04d}.wav")
    print(cfg.data_dir / MANIFEST)
    return 0


def _checkpoint_dir(cfg: RunConfig, target: int | None) -> Path:
    return cfg.checkpoint_dir if target is None else cfg.checkpoint_dir / f"target_{target}"


def cmd_train(cfg: RunConfig) -> int:
    data = load_dataset(cfg)
    targets = list(range(cfg.room.n_speakers)) if cfg.all_targets else [None]
    for target in targets:
        room = cfg.room if target is None else dataclasses.replace(cfg.room, target_index=target)
        ckdir = _checkpoint_dir(cfg, target)
        ckdir.mkdir(parents=True, exist_ok=True)
        stats = ckdir / "stats.jsonl"
        params, history = train_agent(room, data.train, cfg.ppo, cfg.seed, hidden=cfg.hidden,
                                      checkpoint_dir=ckdir, checkpoint_every=cfg.checkpoint_every,
                                      stats_path=stats, resume=cfg.values["train.resume"])
        net.save_params(params, ckdir / FINAL, {"preset": cfg.preset, "seed": cfg.seed,
                                                "target_index": room.target_index, "updates": len(history)})
        print(ckdir / FINAL)
    return 0


def _load_policy(cfg: RunConfig):
    obs_dim = cfg.room.obs_dim
    if cfg.eval.target_rotation:
        return {k: net.load_params(_checkpoint_dir(cfg, k) / FINAL, obs_dim) for k in range(cfg.room.n_speakers)}
    path = Path(cfg.values["eval.checkpoint"] or cfg.checkpoint_dir / FINAL)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return net.load_params(path, obs_dim)


def _finish(cfg: RunConfig, reports) -> None:
    for report in reports:
        path = cfg.report_dir / f"{report.label}.json"
        write_report(report, path)
        print(f"{report.label}: {report.success_rate:.4f} ({path})")
    # The summary covers every report in the directory, so successive commands build one table.
    everything = [read_report(p) for p in sorted(cfg.report_dir.glob("*.json"))]
    write_summary(summarize(everything), cfg.report_dir / "summary.csv")
    # Last stdout line: the success rate of the last (headline) report.
    print(f"{reports[-1].success_rate:.4f}")


def cmd_eval(cfg: RunConfig) -> int:
    eval_seed = derive_seed(cfg.seed, "eval")
    if cfg.eval.policy_mode == RANDOM:
        factory = EnvFactory(cfg.room, load_dataset(cfg).test)
        _finish(cfg, [run_eval(factory, None, cfg.eval, eval_seed, "random")])
        return 0
    params = _load_policy(cfg)
    data = load_dataset(cfg)
    factory = EnvFactory(cfg.room, data.test)
    if cfg.values["eval.few_shot"]:
        if cfg.eval.target_rotation:
            raise ConfigError("eval.few_shot", "cannot be combined with eval.target_rotation")
        result = run_few_shot_experiment(cfg.profiles, cfg.room, cfg.ppo, cfg.seed, few_shot_size=cfg.few_shot_size,
                                         eval_config=cfg.eval, full_params=params, dataset=data)
        _finish(cfg, [result.full, result.few])
    elif cfg.eval.pitch_shift_range is not None:
        _finish(cfg, [run_pitch_shift_eval(factory, params, cfg.eval, eval_seed, "pitch-shift")])
    else:
        _finish(cfg, [run_eval(factory, params, cfg.eval, eval_seed, "trained")])
    return 0


def cmd_baseline(cfg: RunConfig) -> int:
    eval_cfg = dataclasses.replace(cfg.eval, policy_mode=RANDOM, n_episodes=cfg.baseline_episodes)
    factory = EnvFactory(cfg.room, load_dataset(cfg).test)
    _finish(cfg, [run_eval(factory, None, eval_cfg, derive_seed(cfg.seed, "eval"), "baseline")])
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "baseline": cmd_baseline}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        cfg = resolve_config(args)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        (cfg.out_dir / f"{args.command}.config").write_text(cfg.dump())
        return COMMANDS[args.command](cfg)
    except (ConfigError, UsageError) as exc:
        print(f"audionav: error: {exc}", file=sys.stderr)
        return 1
    except (AudioNavError, OSError) as exc:
        print(f"audionav: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
