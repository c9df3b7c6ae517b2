"""minmix command-line entry point."""
import logging
import sys

from dotenv import load_dotenv

load_dotenv()

from src.cli import parse_args, run  # noqa: E402
from src.config import config  # noqa: E402

logging.basicConfig(
    level=getattr(logging, config.log_level, logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)


def main(argv=None) -> int:
    problems = config.validate()
    if problems:
        logger.warning(f"Environment: {problems}")

    run_config = parse_args(argv)
    if run_config.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    return run(run_config)


if __name__ == "__main__":
    sys.exit(main())
