"""Command-line entry point: ``semexplore {explore,bench,render}``.

Exit codes: 0 on normal termination, 1 on a configuration error, 2 on an
I/O error. ``SEGUE_THREADS`` caps the threads used to score candidate poses.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import ConfigError
from ..explore import METHODS, ExplorationConfig, default_sampler, run
from ..sampling import SamplerConfig
from ..sim import load_environment
from .bench import run_benchmark
from .export import export_maps, render_result

log = logging.getLogger("semexplore")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semexplore", description="Semantic next-best-view exploration in grid worlds.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ex = sub.add_parser("explore", help="run one exploration and export its maps")
    ex.add_argument("--env", required=True, help="environment JSON file or bundled world name")
    ex.add_argument("--method", default="segue_us", choices=METHODS)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--samples", type=int, help="poses per sampling round")
    ex.add_argument("--iterations", type=int, help="importance-sampling iterations")
    ex.add_argument("--tau", type=float, default=0.05)
    ex.add_argument("--ratio-threshold", type=float, default=1.1)
    ex.add_argument("--max-ticks", type=int, default=1500)
    ex.add_argument("--out", required=True)

    be = sub.add_parser("bench", help="run a benchmark sweep")
    be.add_argument("--spec", required=True, help="sweep description (JSON)")
    be.add_argument("--out", required=True)
    be.add_argument("--workers", type=int, default=1)

    re_ = sub.add_parser("render", help="re-render map images from an explore output directory")
    re_.add_argument("--result", required=True)
    return parser


def _explore(args) -> int:
    env = load_environment(args.env)
    sampler = default_sampler(args.method)
    if args.samples is not None or args.iterations is not None:
        sampler = SamplerConfig(
            n_samples=sampler.n_samples if args.samples is None else args.samples,
            n_iterations=sampler.n_iterations if args.iterations is None else args.iterations,
        )
    config = ExplorationConfig(method=args.method, seed=args.seed, tau=args.tau,
                               ratio_threshold=args.ratio_threshold, max_ticks=args.max_ticks,
                               sampler=sampler)
    result = run(env, config)
    export_maps(result, args.out)
    print(f"{result.env_name} {config.method} seed={config.seed}: {result.termination_reason.value} "
          f"after {result.ticks} ticks, coverage {result.final_coverage:.3f}, "
          f"average entropy {result.final_entropy:.3f}")
    return EXIT_OK


def _bench(args) -> int:
    with open(args.spec) as fh:
        spec = json.load(fh)
    rows, summary = run_benchmark(spec, args.out, workers=args.workers)
    print(f"{len(rows)} runs, {summary['failed']} failed; coverage order: "
          f"{' > '.join(summary['coverage_order'])}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handlers = {"explore": _explore, "bench": _bench,
                "render": lambda a: (render_result(a.result), EXIT_OK)[1]}
    try:
        return handlers[args.command](args)
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (ConfigError, ValueError, KeyError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
