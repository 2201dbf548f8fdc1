"""Allow ``python -m mastrat``."""

import sys

from .cli import main

sys.exit(main())
