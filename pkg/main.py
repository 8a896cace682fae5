import sys

from app.consortium.cli import main

# --------------------------------------------
# Console Entrypoint
# --------------------------------------------
if __name__ == "__main__":
    sys.exit(main())
