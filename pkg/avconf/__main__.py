import sys

from avconf.cli import main

sys.exit(main())
