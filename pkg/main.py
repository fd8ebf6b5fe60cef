"""
CT Restore - Command-Line Entry Point

Simulates low-exposure CT scans of synthetic phantoms, reconstructs them,
and trains convolutional networks that restore low-exposure images to
high-exposure quality.

    python main.py generate --config configs/desk.ini
    python main.py train --config configs/desk.ini
    python main.py eval --config configs/desk.ini
"""

import sys

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from app.pipeline.cli import main


if __name__ == "__main__":
    sys.exit(main())
