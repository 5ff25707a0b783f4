#!/usr/bin/env python3
"""Run the bundled end-to-end reproduction (attack, analysis, fix, re-check)."""

import sys

from snicheck.cli import main

if __name__ == "__main__":
    sys.exit(main(["demo-codera", *sys.argv[1:]]))
