import sys

from siamtrack.main import main

sys.exit(main())
