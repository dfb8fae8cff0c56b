"""Command line entry point ``vqe-bayes``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .pauli import parse_hamiltonian

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

_INT_KEYS = {"measurements", "shots", "runs", "seed"}
_RUN_KEYS = _INT_KEYS | {"optimizer", "noise", "out", "hamiltonian"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise harness.ConfigError(message)


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` comments and blank lines are ignored."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise harness.ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _RUN_KEYS:
            raise harness.ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vqe-bayes", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run repeated optimizations and write CSV + summary")
    run.add_argument("--config", help="key = value file; flags override it")
    run.add_argument("--optimizer", choices=harness.OPTIMIZERS)
    run.add_argument("--measurements", type=int)
    run.add_argument("--shots", type=int)
    run.add_argument("--runs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--noise", choices=sorted(harness.NOISE_PRESETS))
    run.add_argument("--hamiltonian", help="text file of '<coefficient> <pauli-string>' lines")
    run.add_argument("--out", help="output directory")

    plot = sub.add_parser("plot", help="plot CSV results into an SVG")
    plot.add_argument("--inputs", nargs="+", required=True)
    plot.add_argument("--out", required=True)
    return parser


def config_from_args(args) -> harness.ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in _RUN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    kwargs = {}
    try:
        for key in _INT_KEYS & values.keys():
            kwargs[key] = int(values[key])
    except ValueError as exc:
        raise harness.ConfigError(str(exc)) from None
    if "optimizer" in values:
        kwargs["optimizer"] = values["optimizer"]
    noise = values.get("noise", "off")
    if noise not in harness.NOISE_PRESETS:
        raise harness.ConfigError(f"noise must be one of {sorted(harness.NOISE_PRESETS)}")
    kwargs["noise"] = harness.NOISE_PRESETS[noise]
    kwargs["out_dir"] = Path(values.get("out", "results"))
    if "hamiltonian" in values:
        try:
            kwargs["hamiltonian"] = parse_hamiltonian(Path(values["hamiltonian"]).read_text())
        except (OSError, ValueError) as exc:
            raise harness.ConfigError(f"cannot load Hamiltonian: {exc}") from None
    return harness.ExperimentConfig(**kwargs)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "run":
            cfg = config_from_args(args)
    except harness.ConfigError as exc:
        print(f"vqe-bayes: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            result = harness.run_experiment(cfg)
            agg = result.aggregate()
            fid = agg.mean["fidelity"]
            print(f"{cfg.name}: {len(result.traces)}/{cfg.runs} runs, "
                  f"{cfg.total_shots} shots each, final mean fidelity "
                  f"{fid[-1] if len(fid) else float('nan'):.4f} -> {cfg.out_dir}")
            return EXIT_OK if result.traces else EXIT_RUNTIME
        results = [harness.read_csv(p) for p in args.inputs]
        harness.emit_plot(results, args.out)
        print(f"wrote {args.out}")
        return EXIT_OK
    except Exception as exc:
        logging.getLogger("vqe_bayes").debug("failure", exc_info=True)
        print(f"vqe-bayes: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
