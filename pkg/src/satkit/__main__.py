"""Module entry point: ``python -m satkit`` mirrors the ``satkit`` script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
