import asyncio
import logging
import sys

from checks import InputError, LaboratoryError
from config import build_config
from pipeline import Laboratory

logger = logging.getLogger("infground")


async def main(argv=None) -> int:
    try:
        command, config = build_config(argv)
    except InputError as e:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        logger.error(f"{e.qualified_name}: {e}")
        return 2
    logging.basicConfig(level=config.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    lab = Laboratory(config)
    try:
        return await lab.run(command)
    except InputError as e:
        logger.error(f"{e.qualified_name}: {e}")
        return 2
    except LaboratoryError as e:
        logger.error(f"{e.qualified_name}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
