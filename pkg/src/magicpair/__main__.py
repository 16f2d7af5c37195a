import sys

from magicpair.cli import main

sys.exit(main())
