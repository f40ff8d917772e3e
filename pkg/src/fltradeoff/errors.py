"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class TradeoffError(Exception):
    """Base class for all errors raised by this package."""


# divergence
class SupportMismatch(TradeoffError, ValueError):
    pass


class AbsoluteContinuityViolation(TradeoffError, ValueError):
    pass


class NotNested(TradeoffError, ValueError):
    pass


class NonPositiveVariance(TradeoffError, ValueError):
    pass


class DimensionMismatch(TradeoffError, ValueError):
    pass


class QuadratureFailure(TradeoffError, ArithmeticError):
    pass


class InvalidPMF(TradeoffError, ValueError):
    pass


# mechanisms
class NegativeVariance(TradeoffError, ValueError):
    pass


class NonPositiveBound(TradeoffError, ValueError):
    pass


class RhoOutOfRange(TradeoffError, ValueError):
    pass


class InvalidMechanism(TradeoffError, ValueError):
    pass


class PrimeGenerationFailure(TradeoffError, RuntimeError):
    pass


class PlaintextOutOfRange(TradeoffError, ValueError):
    pass


class CiphertextNotInGroup(TradeoffError, ValueError):
    pass


# flsim / attack
class EmptyDataset(TradeoffError, ValueError):
    pass


class PoolTooSmall(TradeoffError, ValueError):
    pass


# estimation
class EmptyClassSet(TradeoffError, ValueError):
    pass


class ZeroPriorMass(TradeoffError, ValueError):
    pass


class SmoothingRequired(TradeoffError, ValueError):
    """A log-ratio would hit a zero frequency and no smoothing was requested."""


class EpsOutOfRange(TradeoffError, ValueError):
    pass


class DegenerateEstimate(TradeoffError, ValueError):
    pass


# tuner
class InfeasibleBudget(TradeoffError, ValueError):
    """The privacy budget cannot be met by the requested mechanism."""


class InfeasibleBudgetTooTight(InfeasibleBudget):
    pass


class InfeasibleUtilityCap(InfeasibleBudget):
    pass


class NonMonotoneBound(TradeoffError, ArithmeticError):
    pass


# cli
class ConfigError(TradeoffError, ValueError):
    pass
