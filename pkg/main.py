"""
Command-line entry point.

This file imports the application from the app module.
The actual application logic is organized in the app/ directory.
"""
import sys

from app.main import app, run_cli

# Export the click group for console-script wrappers
__all__ = ["app"]

if __name__ == "__main__":
    sys.exit(run_cli())
