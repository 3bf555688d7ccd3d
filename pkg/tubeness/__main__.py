"""Run with: python3 -m tubeness <command> [options]"""

import sys

from tubeness.cli import main

if __name__ == "__main__":
    sys.exit(main())
