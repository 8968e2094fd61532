import sys

from biomix.cli_io import main

sys.exit(main())
