"""``gtg`` command-line interface.

Subcommands: train, eval, verify, inspect-graph, plot, replay. Output goes
under ``$GTG_RUN_DIR`` (default ``./runs``) unless a directory is given.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, replace_section
from .envs import EnvConfig, EpisodeLog, make_env, replay
from .grid import count_edges, family_totals
from .relgraph import serialize_graph
from .tensornet import CheckpointError
from .trainer import (
    IncompatibleModelError,
    NonFiniteLossError,
    build_network,
    edge_census,
    evaluate,
    load_network,
    ood_harness,
    ood_table_csv,
    ood_table_text,
    train,
)
from .adapter import observation_graph

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def run_root() -> Path:
    return Path(os.environ.get("GTG_RUN_DIR", "runs"))


def _config(args, path=None) -> RunConfig:
    cfg = load_config(path, args.set or [])
    if getattr(args, "rules", None):
        cfg = replace_section(cfg, "model", rules=args.rules)
    return cfg


# --------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = _config(args, args.config)
    name = args.name or Path(args.config).stem
    run_dir = Path(args.run_dir) if args.run_dir else run_root() / name
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.dumps())
    log_path = run_dir / "run.log"
    with open(log_path, "w") as log:

        def say(line: str) -> None:
            log.write(line + "\n")
            log.flush()
            if not args.quiet:
                print(line)

        net, env = build_network(cfg.model, cfg.env)
        say(f"run {run_dir}")
        say(f"model {cfg.model.front_end} rules {cfg.model.rule_set}")
        if net.is_graph_model:
            for label, count in edge_census(net, env).items():
                say(f"edges {label} {count}")
        try:
            result = train(cfg.model, cfg.env, cfg.train, run_dir, say)
        except NonFiniteLossError as exc:
            say(f"aborted: {exc}; diagnostic checkpoint in {run_dir / 'checkpoints'}")
            return EXIT_FAIL
        say(f"finished {result.env_steps} steps, {result.updates} updates")
        say(f"checkpoint {result.checkpoint}")
        if cfg.train.final_eval_episodes:
            res = evaluate(result.net, cfg.env, cfg.train.final_eval_episodes, "greedy", seed=cfg.train.seed + 1)
            say(f"eval greedy episodes {res.episodes} mean_return {res.mean_return:.4f} win_rate {res.win_rate:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


def ood_configs(env: EnvConfig) -> list[tuple[str, EnvConfig]]:
    """Held-out variants of a training environment."""
    if env.family == "lava":
        out = [(f"level{l}", env.with_(level=l)) for l in (1, 2, 3) if l != env.level]
        out.append(("portal", env.with_(family="portal", level=1)))
        return out
    if env.family == "rtfm":
        size = 10 if (env.width, env.height) != (10, 10) else 6
        return [(f"{size}x{size}", env.with_(width=size, height=size))]
    return []


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    run_dir = ckpt.parent.parent if ckpt.parent.name == "checkpoints" else ckpt.parent
    config_path = args.config or (run_dir / "config.txt")
    cfg = _config(args, config_path)
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    net = load_network(cfg.model, cfg.env, ckpt)
    if args.ood:
        rows = ood_harness(net, cfg.env, ood_configs(cfg.env), args.episodes, args.mode, args.seed)
        text = ood_table_text(rows)
        (out_dir / "ood.txt").write_text(text + "\n")
        (out_dir / "ood.csv").write_text(ood_table_csv(rows))
        print(text)
        return EXIT_OK
    res = evaluate(net, cfg.env, args.episodes, args.mode, args.seed, record=args.dump_episodes)
    text = (
        f"env {cfg.env.family} {cfg.env.width}x{cfg.env.height} level {cfg.env.level}\n"
        f"episodes {res.episodes} mode {args.mode} seed {args.seed}\n"
        f"mean_return {res.mean_return:.4f} +- {res.return_se:.4f}\n"
        f"win_rate {res.win_rate:.4f} +- {res.win_se:.4f}"
    )
    (out_dir / "eval.txt").write_text(text + "\n")
    (out_dir / "eval.csv").write_text(
        "episodes,mode,seed,mean_return,return_se,win_rate,win_se\n"
        f"{res.episodes},{args.mode},{args.seed},{res.mean_return!r},{res.return_se!r},{res.win_rate!r},{res.win_se!r}\n"
    )
    if res.logs:
        ep_dir = out_dir / "episodes"
        ep_dir.mkdir(exist_ok=True)
        for i, log in enumerate(res.logs):
            (ep_dir / f"episode_{i:03d}.txt").write_text(log.dumps())
    print(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    from .verify import SUITES, check_counts, run_suite

    names = SUITES if args.suite == "all" else (args.suite,)
    ok = True
    for name in names:
        results = run_suite(name)
        for r in results:
            print(r.line())
            ok &= r.passed
        if name == "counts":
            for label, count in count_edges(10, 10).items():
                print(f"  10x10 {label:<16} {count}")
            totals = check_counts(max_size=0)[1]
            print("10x10 census: " + " ".join(f"{k} {v}" for k, v in totals.items()))
    print("all checks passed" if ok else "SOME CHECKS FAILED")
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# inspect-graph


def cmd_inspect(args) -> int:
    cfg = _config(args, args.config)
    net, env = build_network(cfg.model, cfg.env)
    obs = env.reset(args.seed)
    graph = observation_graph(obs, net.rules)
    print(env.render())
    print(f"nodes {graph.num_nodes} feature_dim {graph.feature_dim} edges {graph.num_edges}")
    counts = graph.label_counts()
    expected = count_edges(env.width, env.height, net.rules)
    for label in graph.relation_labels:
        note = ""
        if label in expected and not obs.portal_pairs:
            note = "" if expected[label] == counts[label] else f"  (closed form {expected[label]})"
        print(f"  {label:<16} {counts[label]}{note}")
    fam = family_totals(counts)
    print("families: " + " ".join(f"{k} {v}" for k, v in fam.items()))
    if args.graph_out:
        Path(args.graph_out).write_text(serialize_graph(graph))
    return EXIT_OK


# --------------------------------------------------------------------------
# plot / replay


def cmd_plot(args) -> int:
    from .plot import PlotError, plot_csvs

    out = Path(args.out) if args.out else Path(args.csv[0]).with_name("curves.svg")
    try:
        path = plot_csvs(args.csv, out, args.x, args.y, args.title or "")
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {path}")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        log = EpisodeLog.loads(Path(args.dump).read_text())
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    match, got = replay(log, make_env)
    print(f"replayed {len(got)} steps, return {sum(got):.4f}: {'rewards match' if match else 'MISMATCH'}")
    if args.render:
        env = make_env(log.config)
        env.reset(log.episode_seed)
        for a in log.actions[: len(got)]:
            env.step(a)
        print(env.render())
    return EXIT_OK if match else EXIT_FAIL


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gtg", description="Grid-to-Graph relational RL toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_overrides(p):
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    p = sub.add_parser("train", help="train an agent from a config file")
    p.add_argument("config", help="flat key=value config file")
    p.add_argument("--rules", help="GTG rule families, e.g. local or local,remote,aux")
    p.add_argument("--run-dir", help="output directory (default $GTG_RUN_DIR/<config name>)")
    p.add_argument("--name", help="run name under the run root")
    p.add_argument("--quiet", action="store_true", help="log to run.log only")
    add_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="config file (default: config.txt of the checkpoint's run)")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--ood", action="store_true", help="also evaluate held-out environment variants")
    p.add_argument("--out", help="report directory (default: the run directory)")
    p.add_argument("--dump-episodes", type=int, default=0, metavar="K", help="write replay logs for the first K episodes")
    add_overrides(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run oracle suites")
    p.add_argument("suite", nargs="?", default="all", choices=("conv", "blockmatrix", "grad", "counts", "kbroundtrip", "all"))
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inspect-graph", help="print the relational graph of one observation")
    p.add_argument("--config", help="config file")
    p.add_argument("--rules", help="GTG rule families")
    p.add_argument("--seed", type=int, default=0, help="episode seed")
    p.add_argument("--graph-out", help="write the graph in the text graph format")
    add_overrides(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("plot", help="SVG training curves from metrics CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", help="SVG path (default: curves.svg next to the first CSV)")
    p.add_argument("--x", default="env_steps")
    p.add_argument("--y", default="mean_return")
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("replay", help="re-run a logged episode and check its rewards")
    p.add_argument("dump")
    p.add_argument("--render", action="store_true")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IncompatibleModelError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
