"""Exception hierarchy shared by all modules."""


class SkelStitchError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SkelStitchError, ValueError):
    """Input violates a documented precondition or invariant."""


class FormatError(ValidationError):
    """Malformed SKT/SKQ/PRD/checkpoint text file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class TilingViolation(ValidationError):
    pass


class TopologyMismatch(ValidationError):
    pass


class DegenerateBone(ValidationError):
    def __init__(self, parent, child, frame):
        self.parent, self.child, self.frame = parent, child, frame
        super().__init__(f"bone ({parent}->{child}) has zero length at frame {frame}")


class EmptyCandidateSet(ValidationError):
    pass


class NoValidCorrespondence(SkelStitchError):
    """Best correspondence exceeds d*; ``best`` holds the match for diagnostics."""

    def __init__(self, best, d_star, step=None):
        self.best, self.d_star, self.step = best, d_star, step
        msg = f"best distance {best.distance:.6g} exceeds d*={d_star:.6g}"
        if step is not None:
            msg = f"stitch step {step}: " + msg
        super().__init__(msg)


class AdjacentDuplicateLabels(ValidationError):
    pass


class ExhaustedCandidates(SkelStitchError):
    pass


class ImpossibleConstraint(ValidationError):
    pass


class NoForwardRecorded(SkelStitchError):
    pass


class NonUnitInput(ValidationError):
    pass


class NoPositives(SkelStitchError):
    pass


class EmptyDataset(ValidationError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class InvalidThreshold(ValidationError):
    pass


class MissingPrediction(SkelStitchError):
    pass
