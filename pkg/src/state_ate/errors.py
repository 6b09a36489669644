"""Exception types raised across the toolkit."""


class StateAteError(Exception):
    """Base class for estimation failures."""


class SingularDesign(StateAteError):
    pass


class SingularFit(StateAteError):
    pass


class NonFinitePrediction(StateAteError):
    pass


class TooFewUnits(StateAteError):
    pass


class ZeroDenominator(StateAteError):
    pass


class ZeroVarianceCovariate(StateAteError):
    pass


class IrlsNonConvergence(StateAteError):
    pass


class ScaleUnderflow(StateAteError):
    pass


class NonFiniteEnergy(StateAteError):
    pass
