"""``python3 -m lipauth`` entry point."""

import sys

from .cli import main

sys.exit(main())
