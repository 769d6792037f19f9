"""Exception types raised across the package."""


class LodeiError(Exception):
    """Base class for all errors raised by lodei."""


class NonFiniteError(LodeiError, ValueError):
    def __init__(self, what, index=None):
        self.what = what
        self.index = index
        msg = f"non-finite values in {what}"
        if index is not None:
            msg += f" (at index {index})"
        super().__init__(msg)


class WidthCapError(LodeiError, ValueError):
    def __init__(self, width, cap):
        self.width = width
        self.cap = cap
        super().__init__(f"outer-product width {width} exceeds cap {cap}")


class SpectralCollisionError(LodeiError, ArithmeticError):
    """Sylvester equation AX + XB = C with overlapping spectra of A and -B."""

    def __init__(self, gap):
        self.gap = gap
        super().__init__(f"spectra of A and -B collide: min |lambda_A + lambda_B| = {gap:.3e}")


class SelectionError(LodeiError, ArithmeticError):
    """An index selector could not produce a valid selection."""


class GrowthGuardError(LodeiError, ArithmeticError):
    def __init__(self, growth, guard, stage=None):
        self.growth = growth
        self.guard = guard
        self.stage = stage
        where = "" if stage is None else f" in stage {stage}"
        super().__init__(f"growth factor product {growth:.3e} exceeds guard {guard:.1e}{where}")


class BudgetExceededError(LodeiError, RuntimeError):
    def __init__(self, what, budget):
        self.budget = budget
        super().__init__(f"{what}: enumeration budget of {budget} exceeded")


class IntegrationError(LodeiError, RuntimeError):
    """A time step failed; the partial trajectory is attached."""

    def __init__(self, message, step=None, records=None, state=None):
        self.step = step
        self.records = records if records is not None else []
        self.state = state
        super().__init__(message if step is None else f"step {step}: {message}")


class ConfigError(LodeiError, ValueError):
    pass
