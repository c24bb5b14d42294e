"""Command-line entry point: ``specwalk <subcommand> ...``.

Every run writes ``manifest.json`` next to its outputs with the resolved
configuration, library versions, seeds and SHA-256 of each input file.
Option precedence is defaults < ``--config`` YAML < explicit flags.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import yaml

log = logging.getLogger("specwalk")

DEMO_CHOICES = ("velocity", "rotation", "noisy", "tracking")
_DEMO_KIND = {"velocity": "velocity_comparison", "rotation": "rotation", "noisy": "noisy_plane",
              "tracking": "velocity_tracking"}


class InputError(Exception):
    """Bad or missing input; reported with exit code 2."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba", "pyyaml"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise InputError(f"missing required {what}")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


def write_manifest(out: Path, command: str, args: argparse.Namespace, inputs: list[Path]) -> Path:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    doc = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "versions": _versions(),
        "inputs": {str(p): _sha256(p) for p in inputs},
    }
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _model(args):
    from .dynamics import default_model, load_model
    if args.model:
        return load_model(_require(args.model, "model file"))
    return default_model()


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError as err:
        raise InputError(f"bad seed list {text!r}") from err


def _floats(text: str | None):
    if text is None:
        return None
    return tuple(float(s) for s in str(text).split(",") if s.strip())


# -- subcommands ---------------------------------------------------------------

def cmd_synth_data(args) -> int:
    from . import spectral
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trials = spectral.synthesize_dataset(args.subjects, args.seed, args.trials_per_subject,
                                         args.cycles_per_trial)
    cycles = spectral.build_cycle_corpus(trials)
    spectral.write_cycle_corpus(out / "cycles.csv", cycles)
    spectral.write_spectral_corpus(out / "spectral.csv", [spectral.unify_cycle(c.frames, c.speed, c.morphology)
                                                          for c in cycles])
    write_manifest(out, "synth-data", args, [])
    log.info("wrote %d cycles from %d trials to %s", len(cycles), len(trials), out)
    return 0


def cmd_train_gait(args) -> int:
    from . import gait_net, spectral
    data = _require(args.data, "cycle corpus (--data)")
    cycles = spectral.read_cycle_corpus(data)
    cfg = gait_net.TrainConfig(args.lr, args.batch_size, args.epochs, args.patience, args.seed,
                               tuple(args.hidden), args.activation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = gait_net.train(cycles, cfg)
    gait_net.save_params(result.params, out / "gait_net.json")
    gait_net.write_curve(out / "curve.csv", result.curve)
    (out / "summary.json").write_text(json.dumps({
        "best_epoch": result.best_epoch, "best_val": result.best_val, "test_loss": result.test_loss,
        "epochs_run": len(result.curve), "digest": result.params.digest()}, indent=2) + "\n", encoding="utf-8")
    write_manifest(out, "train-gait", args, [data])
    log.info("best val %.3e at epoch %d; test %.3e", result.best_val, result.best_epoch, result.test_loss)
    return 0


def cmd_grid_search(args) -> int:
    from . import gait_net, spectral
    data = _require(args.data, "cycle corpus (--data)")
    cycles = spectral.read_cycle_corpus(data)
    grid = dict(gait_net.PAPER_GRID)
    for key, attr, cast in (("layers", "layers", int), ("widths", "widths", int),
                            ("learning_rates", "learning_rates", float), ("batch_sizes", "batch_sizes", int)):
        val = getattr(args, attr)
        if val:
            grid[key] = tuple(cast(v) for v in str(val).split(","))
    if args.activations:
        grid["activations"] = tuple(str(args.activations).split(","))
    rows = gait_net.grid_search(cycles, grid, args.seeds, args.max_epochs, args.patience)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gait_net.write_grid_table(out / "grid.csv", rows)
    write_manifest(out, "grid-search", args, [data])
    return 0


def cmd_train_policy(args) -> int:
    from .env import make_env
    from .gait_net import load_params
    from .ppo.core import PpoConfig
    from .ppo.trainer import load_checkpoint, train_policy
    gait_path = _require(args.gait, "gait-net file (--gait)")
    gait = load_params(gait_path)
    model = _model(args)
    cfg = PpoConfig(total_steps=args.total_steps, n_steps=args.n_steps, n_workers=args.workers,
                    minibatch=args.minibatch, epochs=args.epochs, clip=args.clip, alpha=args.alpha,
                    arch=args.arch, rsi=not args.no_rsi, imitation=not args.no_imitation,
                    reference_obs=not args.no_reference_obs, episode_seconds=args.episode_seconds,
                    seed=args.seed, checkpoint_every=args.checkpoint_every)
    inputs = [gait_path]
    resume = None
    if args.resume:
        ckpt = _require(args.resume, "checkpoint (--resume)")
        resume = load_checkpoint(ckpt)
        cfg = resume.config
        inputs.append(ckpt)
    out = Path(args.out)
    write_manifest(out, "train-policy", args, inputs)
    state = train_policy(lambda: make_env(model, gait), cfg, out, gait_digest=gait.digest(), resume=resume)
    log.info("finished at step %d after %d updates", state.step, state.update)
    return 0


def cmd_demo(args) -> int:
    from . import eval_harness as H
    from .gait_net import load_params
    model = _model(args)
    inputs = []
    if args.oracle == "teleport":
        runner = H.TeleportRunner()
    elif args.oracle == "alive":
        runner = H.AlwaysAliveRunner()
    else:
        gait_path = _require(args.gait, "gait-net file (--gait)")
        gait = load_params(gait_path)
        inputs.append(gait_path)
        if args.oracle == "random":
            runner = H.random_runner(model, gait, args.random_seed)
        else:
            ckpt = _require(args.checkpoint, "checkpoint (--checkpoint)")
            inputs.append(ckpt)
            runner = H.policy_runner(ckpt, model, gait)
    seeds = _seeds(args.seeds)
    speeds = _floats(args.speeds)
    seconds = args.episode_seconds
    rsi = not args.no_rsi
    if args.which == "velocity":
        res = H.run_velocity_comparison(runner, speeds or H.SPEED_GRID, seconds, seeds, rsi)
    elif args.which == "rotation":
        angles = _floats(args.angles) or H.ANGLE_GRID
        res = H.run_rotation(runner, angles, speeds or H.SPEED_GRID, seconds, seeds, rsi)
    elif args.which == "noisy":
        res = H.run_noisy_plane(runner, _seeds(args.planes), _floats(args.omegas) or H.OMEGA_GRID,
                                _floats(args.gammas) or H.NOISE_RESOLUTIONS, (speeds or (1.0,))[0],
                                seconds, seeds, args.range_threshold, rsi)
    else:
        res = H.run_velocity_tracking(runner, None, None, seeds, rsi=rsi)
    out = Path(args.out)
    H.write_demo(res, out)
    write_manifest(out, f"demo {args.which}", args, inputs)
    log.info("%s: %s", res.kind, json.dumps(res.aggregates, sort_keys=True)[:200])
    return 0


def cmd_report(args) -> int:
    from . import eval_harness as H
    results = {}
    for item in args.results:
        if "=" not in item:
            raise InputError(f"--results entries look like name=DIR, got {item!r}")
        name, d = item.split("=", 1)
        path = Path(d)
        if not path.is_dir():
            raise InputError(f"results directory not found: {path}")
        demos = {}
        for kind in H.DEMO_KINDS:
            if (path / f"{kind}.json").is_file() and (path / f"{kind}.csv").is_file():
                demos[kind] = H.read_demo(path, kind)
        results[name] = demos
    if not results:
        raise InputError("no --results given")
    rows = H.compare_configurations(results)
    out = Path(args.out)
    csv_path, txt_path = H.write_comparison(rows, out)
    write_manifest(out, "report table3", args,
                   [p for d in (Path(i.split("=", 1)[1]) for i in args.results)
                    for p in sorted(d.glob("*.json")) if p.name != "manifest.json"])
    sys.stderr.write(txt_path.read_text(encoding="utf-8"))
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specwalk", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML file of option defaults")
        sp.set_defaults(func=func)
        return sp

    sp = add("synth-data", cmd_synth_data, "write a synthetic gait-cycle corpus")
    sp.add_argument("--subjects", type=int, default=20)
    sp.add_argument("--trials-per-subject", type=int, default=8)
    sp.add_argument("--cycles-per-trial", type=int, default=6)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("train-gait", cmd_train_gait, "train the gait generator network")
    sp.add_argument("--data", required=True, help="cycles.csv from synth-data")
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=10_000)
    sp.add_argument("--patience", type=int, default=50)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--hidden", type=int, nargs="+", default=[512, 512])
    sp.add_argument("--activation", choices=("relu", "tanh"), default="relu")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("grid-search", cmd_grid_search, "architecture and optimizer grid search")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--max-epochs", type=int, default=10_000)
    sp.add_argument("--patience", type=int, default=50)
    sp.add_argument("--layers", help="comma list, e.g. 1,2,3")
    sp.add_argument("--widths")
    sp.add_argument("--learning-rates")
    sp.add_argument("--batch-sizes")
    sp.add_argument("--activations")

    sp = add("train-policy", cmd_train_policy, "train a torque policy with PPO")
    sp.add_argument("--gait", required=True, help="gait_net.json")
    sp.add_argument("--out", required=True)
    sp.add_argument("--model", help="biped model YAML (default: built-in)")
    sp.add_argument("--arch", default="config1_mlp",
                    choices=("config1_mlp", "config2_recurrent", "config3_recurrent_large"))
    sp.add_argument("--total-steps", type=int, default=300_000)
    sp.add_argument("--n-steps", type=int, default=8192)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--minibatch", type=int, default=256)
    sp.add_argument("--epochs", type=int, default=5)
    sp.add_argument("--clip", type=float, default=0.15)
    sp.add_argument("--alpha", type=float, default=0.0, help="imitation decay strength in [0, 1)")
    sp.add_argument("--no-rsi", action="store_true")
    sp.add_argument("--no-imitation", action="store_true", help="drop the imitation reward")
    sp.add_argument("--no-reference-obs", action="store_true", help="zero the reference observation fields")
    sp.add_argument("--episode-seconds", type=float, default=10.0)
    sp.add_argument("--checkpoint-every", type=int, default=1)
    sp.add_argument("--resume", help="continue from a checkpoint (its config wins)")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("demo", cmd_demo, "run an evaluation demo")
    sp.add_argument("which", choices=DEMO_CHOICES)
    sp.add_argument("--checkpoint")
    sp.add_argument("--gait")
    sp.add_argument("--model")
    sp.add_argument("--oracle", choices=("teleport", "alive", "random"),
                    help="use a scripted stub or random torques instead of a checkpoint")
    sp.add_argument("--random-seed", type=int, default=0)
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--episode-seconds", type=float, default=20.0)
    sp.add_argument("--speeds", help="comma list of commanded speeds")
    sp.add_argument("--angles", help="comma list of ramp angles (deg); write --angles=-5,5 when the list starts negative")
    sp.add_argument("--planes", default="0,1")
    sp.add_argument("--omegas")
    sp.add_argument("--gammas")
    sp.add_argument("--range-threshold", type=float, default=5.0)
    sp.add_argument("--no-rsi", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("report", cmd_report, "comparison table from demo outputs")
    sp.add_argument("which", choices=("table3",))
    sp.add_argument("--results", nargs="+", required=True, metavar="NAME=DIR")
    sp.add_argument("--out", required=True)
    return p


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Load ``--config`` YAML into the chosen subparser's defaults."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    path = _require(known.config, "config file")
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected a mapping of option names")
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    name = next((a for a in argv if a in sub_action.choices), None)
    if name is None:
        return
    sp = sub_action.choices[name]
    dests = {a.dest for a in sp._actions}
    clean = {k.replace("-", "_"): v for k, v in doc.items()}
    unknown = sorted(set(clean) - dests)
    if unknown:
        raise InputError(f"{path}: unknown options {unknown}")
    sp.set_defaults(**clean)
    for a in sp._actions:  # values from the file satisfy required options
        if a.dest in clean:
            a.required = False


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except InputError as err:
        sys.stderr.write(f"specwalk: error: {err}\n")
        return 2
    except SystemExit as exc:  # argparse: --help gives 0, usage errors give 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    from .spectral import InvalidDataError
    try:
        return args.func(args)
    except (InputError, InvalidDataError) as err:
        log.error("%s", err)
        return 2
    except Exception as err:  # noqa: BLE001 - any failure inside a run is a runtime error
        log.exception("run failed: %s", err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
