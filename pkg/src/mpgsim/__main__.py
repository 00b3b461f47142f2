import sys

from mpgsim.cli import main

sys.exit(main())
