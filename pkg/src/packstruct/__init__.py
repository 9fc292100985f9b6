"""packstruct: packaging-structure recognition for palletized transport units.

Given instance-segmentation detections of transport units, their two visible
sides, base pallets and package faces, the pipeline fits a tetragon to each
side mask, rectifies it, and counts package rows and columns to obtain the
unit's packaging structure. A synthetic scene generator provides exact ground
truth; the evaluation module scores recognition results against annotations.
"""

__version__ = "0.1.0"
