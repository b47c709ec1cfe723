import sys

from graphkernel.cli import main

sys.exit(main())
