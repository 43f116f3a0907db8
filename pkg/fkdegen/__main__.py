"""Run the CLI with `python -m fkdegen`."""
import sys

from .cli import main


if __name__ == "__main__":
    sys.exit(main())
