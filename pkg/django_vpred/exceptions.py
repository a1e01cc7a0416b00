class VPredError(Exception):
    """Base class for every error raised by django_vpred."""


class ScheduleError(VPredError, ValueError):
    pass


class StepRangeError(ScheduleError, IndexError):
    def __init__(self, t, T):
        super().__init__('Step %r outside of [0, %d]' % (t, T))
        self.t = t
        self.T = T


class ShapeMismatchError(VPredError, ValueError):
    pass


class IllPosedParameterizationError(VPredError, ValueError):
    """|sin(psi - phi)| fell below the recovery floor."""


class GuidanceError(VPredError, ValueError):
    pass


class CheckpointError(VPredError):
    pass


class DivergenceError(VPredError):
    """Training produced a non-finite loss."""

    def __init__(self, step, recent_losses, where='training'):
        self.step = step
        self.recent_losses = list(recent_losses)
        super().__init__(
            'Non-finite loss during %s at step %d (recent losses: %s)' % (
                where, step, ', '.join('%.4g' % value for value in self.recent_losses)
            )
        )
