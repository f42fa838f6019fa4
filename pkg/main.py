# main.py
import sys
from src.cli import main

if __name__ == "__main__":
    # e.g. python main.py train --data-dir data/mnist --out runs/nvc --mode nvc_ml
    sys.exit(main())
