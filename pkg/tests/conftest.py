import os
import sys

from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")
