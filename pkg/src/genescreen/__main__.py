import sys

from genescreen.cli import main

sys.exit(main())
