"""Exception hierarchy.

Validation problems (bad letters, bad measures, bad config) derive from
``ValidationError``; numerical failures derive from ``NumericalError``. The CLI
maps the two families to exit codes 2 and 3.
"""


class HypwalkError(Exception):
    pass


class ValidationError(HypwalkError, ValueError):
    pass


class NumericalError(HypwalkError, RuntimeError):
    pass


class UnknownLetter(ValidationError):
    def __init__(self, symbol):
        super().__init__(f"unknown letter {symbol!r}")
        self.symbol = symbol


class InvalidLambda(ValidationError):
    pass


class NotCentered(ValidationError):
    def __init__(self, mean):
        super().__init__(f"nu is not centred under mu: sum nu*mu = {mean:.3e}")
        self.mean = mean


class BudgetExceeded(NumericalError):
    def __init__(self, estimated, budget, what="support"):
        super().__init__(f"{what} size {estimated:.3g} exceeds budget {budget:.3g}")
        self.estimated = estimated
        self.budget = budget


class NonConvergence(NumericalError):
    pass


class DegenerateWeights(NumericalError):
    def __init__(self, ess):
        super().__init__(f"effective sample size {ess:.2f} < 10; reweighting too skewed")
        self.ess = ess


class Overflow(NumericalError):
    pass
