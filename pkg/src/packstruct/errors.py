"""Failure taxonomy for per-unit recognition.

Every error that aborts recognition of a single transport unit derives from
RecognitionError; its ``kind`` string keys result documents and reports.
"""


class RecognitionError(Exception):
    """Base class for failures that abort recognition of one transport unit."""

    kind = "error"


class NotQuadrilateral(RecognitionError):
    """A mask boundary could not be simplified to exactly four corners."""

    kind = "not_quadrilateral"


class DegenerateQuad(RecognitionError):
    """Quadrilateral too close to degenerate for a stable rectification."""

    kind = "degenerate_quad"


class AtInfinity(RecognitionError):
    """Projective transform sent a point to (or near) the line at infinity."""

    kind = "at_infinity"


class PalletCountError(RecognitionError):
    kind = "pallet_count"

    def __init__(self, count: int):
        super().__init__(f"expected exactly 1 base pallet, found {count}")
        self.count = count


class SideCountError(RecognitionError):
    kind = "side_count"

    def __init__(self, count: int):
        super().__init__(f"expected exactly 2 transport unit sides, found {count}")
        self.count = count


class MixedPackageCategories(RecognitionError):
    kind = "mixed_package_categories"


class EmptySide(RecognitionError):
    """A transport unit side ended up with no packages assigned to it."""

    kind = "empty_side"


class EmptySideMask(RecognitionError):
    """Mask refinement or rasterization left a side without any pixels."""

    kind = "empty_side_mask"


class AmbiguousSides(RecognitionError):
    """The two side masks cannot be ordered left/right by centroid."""

    kind = "ambiguous_sides"


class VerticalCountMismatch(RecognitionError):
    kind = "vertical_count_mismatch"

    def __init__(self, left: int, right: int):
        super().__init__(f"vertical package counts disagree: left={left}, right={right}")
        self.left = left
        self.right = right


class InvalidCount(RecognitionError):
    """An axis count came out below 1; the side geometry makes no sense."""

    kind = "invalid_count"
