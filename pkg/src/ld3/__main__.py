import sys

from ld3.cli import main

sys.exit(main())
