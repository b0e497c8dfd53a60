import sys

from edaseg.cli import main

sys.exit(main())
