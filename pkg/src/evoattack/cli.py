"""Command-line front end: ``evoattack {attack,bench,eval-model,fixture}``.

Exit codes: 0 success, 1 the attack found no adversarial example,
2 usage/configuration error, 3 runtime (oracle or I/O) error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .attack import DEFAULT_EPSILON, AttackConfig, run_attack
from .dataset import filter_correctly_classified, load_dataset
from .errors import ConfigError, EvoAttackError
from .external import spawn_external_oracle
from .fixtures import FixtureSpec, generate_fixtures
from .oracle import DEFAULT_BUDGET, ModelOracle, load_model
from .ppm import read_ppm, write_ppm
from .strategies import ALGORITHMS, DEFAULTS, canonical_algorithm
from .tensors import argmax

EXIT_OK, EXIT_NO_SUCCESS, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

ALGO_FLAGS = {"1p1": "one_plus_one", "nes": "nes", "cmaes": "cma_es"}


class UsageError(Exception):
    pass


def _default_seed():
    raw = os.environ.get("EVOATTACK_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"EVOATTACK_SEED must be an integer, got {raw!r}") from None


def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a {kind.__name__}, got {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def _hw(text):
    parts = text.lower().replace("x", ",").split(",")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected H,W or HxW, got {text!r}") from None
    if len(values) == 1:
        values *= 2
    if len(values) != 2 or min(values) < 1:
        raise argparse.ArgumentTypeError(f"expected two positive integers, got {text!r}")
    return tuple(values)


def _sweep(text):
    try:
        start, stop, step = (float(v) for v in text.split(":"))
        return bench.epsilon_sweep(start, stop, step)
    except (ValueError, ConfigError) as exc:
        raise argparse.ArgumentTypeError(f"expected START:STOP:STEP, got {text!r} ({exc})") from None


def _eps_list(text):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}") from None
    if any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError("epsilons must be positive")
    return values


def _add_oracle_flags(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", type=Path, help="weight file of an in-process feed-forward victim")
    src.add_argument("--oracle-cmd", help="command of an external oracle speaking the line protocol")
    p.add_argument("--classes", type=_positive(int), help="expected class count of an external oracle")
    p.add_argument("--oracle-timeout", type=_positive(float), default=60.0,
                   help="seconds to wait for each external oracle reply (default: 60)")


def _add_attack_shape_flags(p, single_eps=True):
    if single_eps:
        p.add_argument("--eps", type=_positive(float), default=DEFAULT_EPSILON,
                       help=f"L-inf bound of the perturbation (default: {DEFAULT_EPSILON})")
    p.add_argument("--budget", type=_positive(int), default=DEFAULT_BUDGET,
                   help=f"query budget per attack (default: {DEFAULT_BUDGET})")
    p.add_argument("--scale", type=_positive(int),
                   help="nearest-neighbour upsampling factor (default: image size / genome size, or 1)")
    p.add_argument("--genome-hw", type=_hw, help="genome height and width, e.g. 8x8 (default: image size / scale)")
    p.add_argument("--seed", type=int, help="random seed (default: $EVOATTACK_SEED or 0)")
    p.add_argument("--sigma", type=_positive(float), help="initial step size (default: 1 for every algorithm)")
    p.add_argument("--popsize", type=_positive(int),
                   help=f"population size (default: NES {DEFAULTS['nes']['popsize']}, CMA-ES {DEFAULTS['cma_es']['popsize']})")
    p.add_argument("--eta", type=_positive(float), help=f"NES learning rate (default: {DEFAULTS['nes']['eta']})")
    p.add_argument("--generations", type=_positive(int),
                   help="generation cap (default: 10000 for (1+1)-ES and NES, 400 for CMA-ES)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="evoattack", description="Black-box adversarial attacks with evolution strategies."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="attack a single image")
    _add_oracle_flags(p)
    p.add_argument("--image", type=Path, required=True, help="binary PPM (P6) image")
    p.add_argument("--label", type=int, required=True, help="true class of the image")
    p.add_argument("--algo", choices=sorted(ALGO_FLAGS), required=True, help="evolution strategy")
    p.add_argument("--target", type=int, help="target class; omit for an untargeted attack")
    p.add_argument("--out", type=Path, default=Path("attack.json"),
                   help="outcome record; the adversarial PPM and genome are written next to it")
    _add_attack_shape_flags(p)

    p = sub.add_parser("bench", help="run an algorithm x epsilon grid over a dataset")
    _add_oracle_flags(p)
    p.add_argument("--dataset", type=Path, required=True, help="directory holding labels.csv and PPM images")
    p.add_argument("--algos", default="all", help="comma list of 1p1,nes,cmaes or 'all' (default: all)")
    eps = p.add_mutually_exclusive_group()
    eps.add_argument("--eps", type=_eps_list, help=f"comma list of epsilons (default: {DEFAULT_EPSILON})")
    eps.add_argument("--eps-sweep", type=_sweep, help="inclusive START:STOP:STEP, e.g. 0.01:0.09:0.02")
    p.add_argument("--reps", type=_positive(int), default=1, help="repetitions per image (default: 1)")
    p.add_argument("--targeted", action="store_true", help="attack towards the dataset's target column")
    p.add_argument("--parallel", type=_positive(int), default=1, help="worker threads (default: 1)")
    p.add_argument("--resume", action="store_true", help="skip cells already in the results file")
    p.add_argument("--results", type=Path, default=Path("results.jsonl"), help="results file (default: results.jsonl)")
    p.add_argument("--report", type=Path, default=Path("report.csv"), help="summary report (default: report.csv)")
    p.add_argument("--report-format", choices=["csv", "json"], default="csv")
    _add_attack_shape_flags(p, single_eps=False)

    p = sub.add_parser("eval-model", help="clean accuracy of the victim on a dataset")
    _add_oracle_flags(p)
    p.add_argument("--dataset", type=Path, required=True)

    p = sub.add_parser("fixture", help="generate a seeded victim model and dataset")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int, help="random seed (default: $EVOATTACK_SEED or 0)")
    p.add_argument("--classes", type=int, default=4, help="number of classes (default: 4)")
    p.add_argument("--hw", type=_positive(int), default=16, help="image height and width (default: 16)")
    p.add_argument("--images", type=_positive(int), default=20, help="number of images (default: 20)")
    p.add_argument("--layers", default="32", help="comma list of hidden widths (default: 32)")
    p.add_argument("--contrast", type=_positive(float), default=0.25,
                   help="pixel spread around mid-grey (default: 0.25)")
    return parser


def _overrides(args):
    out = {}
    for key in ("sigma", "popsize", "eta", "generations"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _algo_overrides(algorithm, overrides):
    allowed = set(DEFAULTS[algorithm])
    return {k: v for k, v in overrides.items() if k in allowed}


def _resolve_geometry(args, image_shape):
    H, W, C = image_shape
    scale, hw = args.scale, args.genome_hw
    if hw is None:
        scale = scale or 1
        if H % scale or W % scale:
            raise UsageError(f"image {H}x{W} is not divisible by --scale {scale}")
        hw = (H // scale, W // scale)
    elif scale is None:
        if H % hw[0] or W % hw[1] or H // hw[0] != W // hw[1]:
            raise UsageError(f"--genome-hw {hw[0]}x{hw[1]} does not evenly divide image {H}x{W}")
        scale = H // hw[0]
    return (hw[0], hw[1], C), scale


def _open_oracle(args, input_shape):
    if args.model is not None:
        return ModelOracle(load_model(args.model))
    return spawn_external_oracle(args.oracle_cmd, input_shape, args.classes, args.oracle_timeout)


def cmd_attack(args):
    algorithm = ALGO_FLAGS[args.algo]
    if args.target is not None and args.target == args.label:
        raise UsageError("target equals true label")
    if args.label < 0 or (args.target is not None and args.target < 0):
        raise UsageError("class indices must be non-negative")
    seed = args.seed if args.seed is not None else _default_seed()

    image = read_ppm(args.image)
    genome_shape, scale = _resolve_geometry(args, image.shape)
    config = AttackConfig(
        true_class=args.label,
        target_class=args.target,
        genome_shape=genome_shape,
        scale=scale,
        epsilon=args.eps,
        budget=args.budget,
        algorithm=algorithm,
        seed=seed,
        overrides=_algo_overrides(algorithm, _overrides(args)),
    )
    try:
        config.validate(image.shape)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None

    with _open_oracle(args, image.shape) as oracle:
        try:
            config.validate(image.shape, oracle.num_classes)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        outcome = run_attack(image, config, oracle)

    out = args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    record = {
        "image": str(args.image),
        "algorithm": algorithm,
        "mode": config.mode,
        "true_class": config.true_class,
        "target_class": config.target_class,
        "epsilon": config.epsilon,
        "budget": config.budget,
        "scale": config.scale,
        "genome_shape": list(config.genome_shape),
        "seed": seed,
        **outcome.to_record(),
        "adversarial_image": None,
        "genome_file": None,
    }
    if outcome.success:
        ppm_path = out.with_suffix(".ppm")
        genome_path = out.with_suffix(".genome.npy")
        write_ppm(ppm_path, outcome.adversarial_image)
        np.save(genome_path, outcome.final_genome.data, allow_pickle=False)
        record["adversarial_image"] = ppm_path.name
        record["genome_file"] = genome_path.name
    out.write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")

    verdict = "success" if outcome.success else "failure"
    print(
        f"{verdict}: {algorithm} eps={config.epsilon:g} queries={outcome.queries_used} "
        f"predicted={outcome.predicted_class_at_end} best_fitness={outcome.best_fitness:.6g} -> {out}"
    )
    return EXIT_OK if outcome.success else EXIT_NO_SUCCESS


def _parse_algos(text):
    if text.strip().lower() == "all":
        return list(ALGORITHMS)
    names = []
    for part in text.split(","):
        part = part.strip()
        if part in ALGO_FLAGS:
            names.append(ALGO_FLAGS[part])
        else:
            try:
                names.append(canonical_algorithm(part))
            except ConfigError:
                raise UsageError(f"unknown algorithm {part!r} in --algos") from None
    return list(dict.fromkeys(names))


def cmd_bench(args):
    algorithms = _parse_algos(args.algos)
    epsilons = args.eps_sweep or args.eps or [DEFAULT_EPSILON]
    seed = args.seed if args.seed is not None else _default_seed()

    dataset = load_dataset(args.dataset)
    if len(dataset) == 0:
        raise UsageError(f"dataset {args.dataset} has no images")
    genome_shape, scale = _resolve_geometry(args, dataset.image_shape)
    overrides = _overrides(args)

    with _open_oracle(args, dataset.image_shape) as oracle:
        try:
            dataset.check_classes(oracle.num_classes)
        except EvoAttackError as exc:
            raise UsageError(str(exc)) from None
        attacked = filter_correctly_classified(dataset, oracle)
        if len(attacked) == 0:
            raise UsageError("no image is correctly classified by the victim; nothing to attack")
        logging.getLogger(__name__).info("%d of %d images correctly classified", len(attacked), len(dataset))
        plan = bench.ExperimentPlan(
            dataset=attacked,
            algorithms=algorithms,
            epsilons=epsilons,
            targeted=args.targeted,
            budget=args.budget,
            scale=scale,
            genome_shape=genome_shape,
            base_seed=seed,
            repetitions=args.reps,
            overrides={a: _algo_overrides(a, overrides) for a in algorithms},
        )
        try:
            plan.validate(oracle.num_classes)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        records = bench.run_plan(plan, oracle, args.results, resume=args.resume, parallel=args.parallel)

    rows = bench.summarize(records)
    if rows:
        bench.emit_report(rows, args.report, args.report_format)
        sys.stdout.write(bench.format_report(rows, "csv"))
    print(f"{len(records)} cells -> {args.results}; report -> {args.report}")
    return EXIT_OK


def cmd_eval_model(args):
    dataset = load_dataset(args.dataset)
    if len(dataset) == 0:
        raise UsageError(f"dataset {args.dataset} has no images")
    with _open_oracle(args, dataset.image_shape) as oracle:
        counts = {}
        for entry in dataset:
            hit = argmax(oracle.classify(entry.image)) == entry.true_class
            correct, total = counts.get(entry.true_class, (0, 0))
            counts[entry.true_class] = (correct + hit, total + 1)
    correct = sum(c for c, _ in counts.values())
    print(f"accuracy: {100.0 * correct / len(dataset):.2f}% ({correct}/{len(dataset)})")
    for cls in sorted(counts):
        c, t = counts[cls]
        print(f"class {cls}: {c}/{t}")
    return EXIT_OK


def cmd_fixture(args):
    if args.classes < 2:
        raise UsageError("--classes must be at least 2")
    try:
        hidden = tuple(int(v) for v in args.layers.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--layers must be a comma list of integers, got {args.layers!r}") from None
    if any(h < 1 for h in hidden):
        raise UsageError("--layers widths must be positive")
    if args.contrast > 0.5:
        raise UsageError("--contrast must not exceed 0.5")
    seed = args.seed if args.seed is not None else _default_seed()
    spec = FixtureSpec(hw=args.hw, classes=args.classes, hidden=hidden, images=args.images, contrast=args.contrast)
    model_path, data_dir = generate_fixtures(seed, args.out_dir, spec)
    print(model_path)
    print(data_dir)
    return EXIT_OK


COMMANDS = {"attack": cmd_attack, "bench": cmd_bench, "eval-model": cmd_eval_model, "fixture": cmd_fixture}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"evoattack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EvoAttackError, OSError) as exc:
        print(f"evoattack {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
