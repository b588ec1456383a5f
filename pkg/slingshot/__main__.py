import sys

from slingshot.main import main

sys.exit(main())
