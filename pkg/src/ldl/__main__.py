import sys

from ldl.cli import main

sys.exit(main())
