import sys

from tldrseg.cli import main

sys.exit(main())
