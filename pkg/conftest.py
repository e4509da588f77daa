import sys
from pathlib import Path

# Make the top-level packages importable without installing the repo
sys.path.insert(0, str(Path(__file__).resolve().parent))
