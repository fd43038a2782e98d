import sys

from palletmap.cli import main

sys.exit(main())
