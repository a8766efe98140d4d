import sys

from eend_lab.cli import main

sys.exit(main())
