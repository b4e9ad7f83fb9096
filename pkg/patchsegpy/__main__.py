"""Runs the patchsegpy command line, see `patchsegpy.cli`."""
import sys
from .cli import main

sys.exit(main())
