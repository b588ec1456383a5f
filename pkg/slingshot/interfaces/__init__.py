"""
Abstract interfaces for pluggable components.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from slingshot.interfaces.parameterization import Parameterization

__all__ = ["Parameterization"]
