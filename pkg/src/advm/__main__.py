import sys

from advm.cli import main

sys.exit(main())
