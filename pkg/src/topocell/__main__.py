"""Allow `python -m topocell ...`."""

import sys

from .cli import main

sys.exit(main())
