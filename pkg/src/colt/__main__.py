import sys

from colt.cli import main

sys.exit(main())
