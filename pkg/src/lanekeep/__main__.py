import sys

from lanekeep.harness.cli import main

sys.exit(main())
