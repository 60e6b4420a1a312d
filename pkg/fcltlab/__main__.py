"""Allow running as `python -m fcltlab`."""

from fcltlab.main import main

main()
