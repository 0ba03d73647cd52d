import sys

from privmech.simharness.cli import main

sys.exit(main())
