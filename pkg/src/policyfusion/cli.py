"""Command-line entry points: train policies, learn rewards, run packaged
experiments, serve the playground, and self-check the numerics."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import airl, harness
from .artifacts import save_policy, write_document
from .gridworld import (ARENA_WORLD, COLLECT_WORLD, ArenaWorld, CollectWorld,
                        LevelPool, feature_dim)
from .policy import make_descriptor
from .ppo import PpoConfig, train


def _ppo_config(args) -> PpoConfig:
    return PpoConfig(iterations=args.iterations, rollout=args.rollout,
                     lr=args.lr, value_lr=args.value_lr,
                     ent_coef=args.ent_coef, minibatch=args.minibatch)


def _add_ppo_args(p, iterations=100):
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--rollout", type=int, default=2048)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--value-lr", type=float, default=0.01)
    p.add_argument("--ent-coef", type=float, default=0.01)
    p.add_argument("--minibatch", type=int, default=256)


def cmd_train(args) -> int:
    flags = frozenset(args.flags)
    known = frozenset(args.known_flags) if args.known_flags is not None \
        else flags
    if args.env == COLLECT_WORLD:
        env = CollectWorld(mode="terminal", horizon=args.horizon)
        desc = make_descriptor("tabular", env.n_actions, n_states=100,
                               env_kind=args.env)
    else:
        opp_rng = np.random.default_rng(args.seed + 1)

        def opponent(env_, state):
            return int(opp_rng.integers(env_.n_actions))
        env = ArenaWorld(opponent=opponent, mode="terminal",
                         horizon=args.horizon)
        desc = make_descriptor("mlp", env.n_actions,
                               input_dim=feature_dim(args.env, known),
                               hidden=64, env_kind=args.env,
                               known_flags=sorted(known))
    pool = LevelPool(args.env, feature_flags=flags, master_seed=args.seed)
    result = train(env, pool, desc, args.channels, _ppo_config(args),
                   args.seed, known_flags=known)
    save_policy(args.out, result.params, result.vparams,
                config_echo={"channels": args.channels,
                             "iterations": args.iterations},
                master_seed=args.seed,
                env_fingerprint={"env": args.env, "flags": sorted(flags)})
    last = result.history[-1]
    print(f"saved {args.out}; final channel means "
          f"{ {k: round(v, 3) for k, v in last['channel_means'].items()} } "
          f"({result.wall_seconds:.1f}s)")
    return 0


def cmd_irl_train(args) -> int:
    acfg = airl.AirlConfig(n=args.n, k_rl=args.k_rl,
                           sigma_target=args.sigma_target,
                           horizon=args.horizon,
                           outer_iterations=args.outer_iterations)
    pcfg = PpoConfig(iterations=args.iterations, rollout=1024, lr=0.02,
                     value_lr=0.05, ent_coef=0.01)
    result = airl.train_deairl(args.env, args.expert, acfg, pcfg, args.seed)
    airl.save_reward_model(result, args.out, acfg.gamma, acfg.sigma_target,
                           config_echo={"expert": args.expert, "n": acfg.n,
                                        "k_rl": acfg.k_rl})
    if args.policy_out:
        save_policy(args.policy_out, result.params, result.vparams,
                    master_seed=args.seed,
                    env_fingerprint={"env": args.env})
    print(f"saved learned reward to {args.out} "
          f"(final discriminator loss {result.history[-1]['disc_loss']:.4f})")
    return 0


def _finish_report(report, out_dir, figures) -> None:
    harness.write_report(report, out_dir)
    print(f"wrote {os.path.join(out_dir, 'report.json')} and report.csv")
    if figures:
        from .figures import render_report_figures
        for path in render_report_figures(report, out_dir):
            print(f"wrote {path}")


def cmd_fuse_eval(args) -> int:
    with open(args.spec) as fh:
        spec = harness.ExperimentSpec.from_json(fh.read())
    report = harness.run_use_case(spec)
    _finish_report(report, args.out, args.figures)
    return 0


def cmd_use_case(args) -> int:
    spec = harness.ExperimentSpec(
        use_case=args.name, episodes=args.episodes,
        master_seed=args.seed, methods=tuple(args.methods),
        epsilon=args.epsilon)
    report = harness.run_use_case(spec)
    _finish_report(report, args.out, args.figures)
    return 0


def cmd_serve(args) -> int:
    from .server import serve
    serve(args.host, args.port, args.checkpoints)
    return 0


def cmd_check(args) -> int:
    """Self-check: fusion algebra over random ensembles, gradient
    verification, and the AIRL reward identity."""
    from .fusion import (ActionDistribution, FusionEnsemble,
                         fused_distribution)
    from .ppo import gradient_check_suite

    rng = np.random.default_rng(0)
    failures = 0
    worst = 0.0
    for _ in range(args.ensembles):
        n = int(rng.integers(2, 20))
        k = int(rng.integers(1, 5))
        dists = [ActionDistribution(rng.dirichlet(np.ones(n)))
                 for _ in range(k + 1)]
        for method in harness.FUSION_METHODS:
            ens = FusionEnsemble(main=lambda s, d=dists[0]: d,
                                 subs=[lambda s, d=d: d for d in dists[1:]],
                                 method=method,
                                 epsilon=float(rng.normal(0, 0.5)))
            out = fused_distribution(ens, None)
            err = abs(out.probs.sum() - 1.0)
            worst = max(worst, err)
            if err > 1e-9 or (out.probs < 0).any():
                failures += 1
    print(f"fusion algebra: {args.ensembles} ensembles x 4 methods, "
          f"max |sum-1| = {worst:.2e} -> "
          f"{'ok' if failures == 0 else f'{failures} FAILURES'}")

    grad_err = gradient_check_suite(points=args.grad_points, seed=1)
    disc_err = airl.discriminator_gradient_check(points=args.grad_points,
                                                 seed=1)
    print(f"gradient check: max relative error policy/value {grad_err:.2e}, "
          f"discriminator {disc_err:.2e} -> "
          f"{'ok' if max(grad_err, disc_err) < 1e-4 else 'FAILURE'}")

    id_rng = np.random.default_rng(2)
    f_vals = id_rng.normal(size=1000)
    pi_vals = id_rng.uniform(0.01, 1.0, size=1000)
    d = airl.discriminator_prob(f_vals, pi_vals)
    r_hat = airl.learned_reward(f_vals, pi_vals)
    identity_err = float(np.abs(np.log(d) - np.log1p(-d) - r_hat).max())
    print(f"AIRL identity: max |logit(D) - (f - ln pi)| = {identity_err:.2e} "
          f"-> {'ok' if identity_err < 1e-9 else 'FAILURE'}")
    ok = (failures == 0 and grad_err < 1e-4 and disc_err < 1e-4
          and identity_err < 1e-9)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="policyfusion",
        description="Train, fuse and evaluate gridworld policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one policy with PPO")
    p.add_argument("env", choices=[COLLECT_WORLD, ARENA_WORLD])
    p.add_argument("--channels", nargs="+", required=True)
    p.add_argument("--flags", nargs="*", default=[],
                   choices=["orb", "death-tile"])
    p.add_argument("--known-flags", nargs="*", default=None)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_ppo_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("irl-train", help="learn a reward from a scripted "
                                         "expert (DE-AIRL)")
    p.add_argument("--env", default=COLLECT_WORLD,
                   choices=[COLLECT_WORLD, ARENA_WORLD])
    p.add_argument("--expert", default="green-collector")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--k-rl", type=int, default=5)
    p.add_argument("--sigma-target", type=float, default=0.2)
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--outer-iterations", type=int, default=60)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--policy-out", default=None)
    p.set_defaults(func=cmd_irl_train)

    p = sub.add_parser("fuse-eval", help="run an experiment spec file")
    p.add_argument("spec")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction,
                   default=True)
    p.set_defaults(func=cmd_fuse_eval)

    p = sub.add_parser("use-case", help="run a packaged use-case")
    p.add_argument("name", choices=list(harness.USE_CASES))
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--methods", nargs="+", default=list(harness.FUSION_METHODS))
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction,
                   default=True)
    p.set_defaults(func=cmd_use_case)

    p = sub.add_parser("serve", help="serve playground sessions over TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7333)
    p.add_argument("--checkpoints", default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("check", help="run numeric self-checks")
    p.add_argument("--ensembles", type=int, default=10000)
    p.add_argument("--grad-points", type=int, default=20)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None and args.command == "use-case":
        args.seed = harness.DEFAULT_USE_CASE_SEEDS[args.name]
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
