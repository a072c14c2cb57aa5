import sys

from .experiment_cli import main

sys.exit(main())
