import sys

from afarq.cli import main

sys.exit(main())
