import sys

from cli import main

if __name__ == '__main__':
    # same entry point as the `gelsim` console script
    sys.exit(main())
