import sys
from pathlib import Path

# Allow running the suite without an installed package, as long as the
# sources are present (the compiled extension is optional either way).
SRC = Path(__file__).resolve().parent.parent / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))
