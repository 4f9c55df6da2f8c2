import sys

from lero.cli import main

sys.exit(main())
