import os
import sys

# oracles.py lives next to the tests and must shadow nothing in the package
sys.path.insert(0, os.path.dirname(__file__))
