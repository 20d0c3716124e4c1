#!/usr/bin/env python3
"""Entry point for running the planner CLI.

This allows the CLI to be run with:
    python -m app
    uv run python -m app
"""

from app.cli import main

if __name__ == "__main__":
    main()
