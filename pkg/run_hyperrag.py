# run_hyperrag.py
import sys

from hyperrag.cli import main

if __name__ == "__main__":
    sys.exit(main())
