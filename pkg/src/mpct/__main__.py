import sys

from mpct.cli import main

sys.exit(main())
