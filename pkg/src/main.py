import os
import sys
import json
import logging
from dotenv import load_dotenv

from src.bench.cli import build_parser, config_from_args
from src.bench.commands import cmd_offline, cmd_online, cmd_peclet, cmd_report
from src.errors import BenchError
from src.notifications.webhook_notifier import RunNotifier

logger = logging.getLogger(__name__)


def configure_logging():
    """Root logger to BENCH_LOG_FILE and the console at BENCH_LOG_LEVEL."""
    level = os.getenv("BENCH_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(os.getenv("BENCH_LOG_FILE", "bench.log")),
            logging.StreamHandler()
        ]
    )


def run(args) -> None:
    config = config_from_args(args)
    logger.info(f"{args.command} {config.problem} ({config.scale}), output under {config.output_dir}")

    if args.command == "offline":
        manifests = cmd_offline(config, args.strict, RunNotifier())
        for rule, path in manifests.items():
            print(f"{rule}: {path}")
    elif args.command == "online":
        outcome = cmd_online(config, args.mu, args.n, args.mode, args.rule, args.compare, args.export_dir)
        print(json.dumps(outcome.summary(), indent=2))
    elif args.command == "report":
        for path in cmd_report(config, not args.no_plots, RunNotifier()):
            print(path)
    elif args.command == "peclet":
        print(json.dumps(cmd_peclet(config, args.mu), indent=2))


def main(argv=None) -> int:
    """
    Entry point of the benchmark tool.
    Returns the process exit code: 0 on success, the error's category code otherwise.
    """
    load_dotenv()
    configure_logging()
    args = build_parser().parse_args(argv)

    try:
        run(args)
    except BenchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.critical("Interrupted by user")
        return 130
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
