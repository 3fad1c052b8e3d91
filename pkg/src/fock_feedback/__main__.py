import sys

from fock_feedback.cli import main

sys.exit(main())
