# Run the AnchorPose command line
# Usage: python run.py <command> [flags]   (python run.py --help lists commands)

import sys

from src.main import main

if __name__ == "__main__":
    sys.exit(main())
