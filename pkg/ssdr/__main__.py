import sys

from ssdr.main import main

sys.exit(main())
