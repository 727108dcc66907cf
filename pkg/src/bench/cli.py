import argparse

from src.bench.config import SCALES, BenchmarkConfig, resolve_config
from src.ocp.problem import PROBLEM_IDS
from src.quadrature.sampling import RULES
from src.rom.online import ONLINE_MODES

# Flag destination -> config field, for the overrides every subcommand accepts.
OVERRIDES = ("mesh_h", "delta", "alpha", "n_train", "n_max", "n_test", "n_steps", "final_time",
             "rules", "modes", "seed", "output_dir", "jobs")


def _names(text: str) -> tuple[str, ...]:
    return tuple(item.strip() for item in text.split(",") if item.strip())


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)

    # Experiment selection
    common.add_argument("--config", type=str, default=None, help="KEY=value experiment file")
    common.add_argument("--problem", choices=PROBLEM_IDS, default=None)
    common.add_argument("--scale", choices=SCALES, default=None)

    # Discretization
    common.add_argument("--mesh-h", type=float, default=None)
    common.add_argument("--delta", type=float, default=None)
    common.add_argument("--alpha", type=float, default=None)
    common.add_argument("--n-steps", type=int, default=None)
    common.add_argument("--final-time", type=float, default=None)

    # Reduction
    common.add_argument("--n-train", type=int, default=None)
    common.add_argument("--n-max", type=int, default=None)
    common.add_argument("--n-test", type=int, default=None)
    common.add_argument("--rules", type=_names, default=None, help=f"comma-separated subset of {','.join(RULES)}")
    common.add_argument("--modes", type=_names, default=None,
                        help=f"comma-separated subset of {','.join(ONLINE_MODES)}")
    common.add_argument("--seed", type=int, default=None)

    # Output
    common.add_argument("--output-dir", type=str, default=None)
    common.add_argument("--jobs", type=int, default=None)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wpod-bench",
        description="Weighted POD reduced models for SUPG-stabilized parametrized optimal control",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    common = _common_parser()
    commands = parser.add_subparsers(dest="command", required=True)

    offline = commands.add_parser("offline", parents=[common], help="build and store reduced models")
    offline.add_argument("--strict", action="store_true", help="fail instead of capping N_max")

    online = commands.add_parser("online", parents=[common], help="solve a stored model at one parameter")
    online.add_argument("--mu", type=float, nargs=2, required=True, metavar=("MU1", "MU2"))
    online.add_argument("--n", type=int, default=None, help="reduced size, N_max when omitted")
    online.add_argument("--mode", choices=tuple(ONLINE_MODES), default="offline-online")
    online.add_argument("--rule", choices=RULES, default="mc")
    online.add_argument("--compare", action="store_true", help="also solve the truth and report errors")
    online.add_argument("--export-dir", type=str, default=None)

    report = commands.add_parser("report", parents=[common], help="error decay and speedup tables")
    report.add_argument("--no-plots", action="store_true")

    peclet = commands.add_parser("peclet", parents=[common], help="local Péclet numbers at one parameter")
    peclet.add_argument("--mu", type=float, nargs=2, required=True, metavar=("MU1", "MU2"))

    return parser


def config_from_args(args: argparse.Namespace) -> BenchmarkConfig:
    overrides = {name: getattr(args, name) for name in OVERRIDES}
    return resolve_config(args.problem, args.scale, args.config, **overrides)
