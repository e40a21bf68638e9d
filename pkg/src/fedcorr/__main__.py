import sys

from fedcorr.cli import main

sys.exit(main())
