import sys

from namestate.cli import main

sys.exit(main())
