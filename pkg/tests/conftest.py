import sys
from pathlib import Path

# allow acceptance tests to reuse helpers from sibling test modules
sys.path.insert(0, str(Path(__file__).parent))
