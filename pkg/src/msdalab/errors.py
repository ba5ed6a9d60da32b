"""Exception types raised across the package.

Every error derives from :class:`MSDAError`; the command line maps these to
exit status 2.
"""


class MSDAError(Exception):
    pass


class ParameterError(MSDAError, ValueError):
    pass


class SpecError(MSDAError, ValueError):
    pass


class ShapeError(MSDAError, ValueError):
    pass


class UnsupportedMomentError(MSDAError, ValueError):
    pass


class SizeError(MSDAError, ValueError):
    pass


class NumericalAccuracyError(MSDAError, ArithmeticError):
    pass


class NotPSDError(MSDAError, ValueError):
    def __init__(self, eigenvalue: float, tol: float):
        self.eigenvalue = float(eigenvalue)
        self.tol = float(tol)
        super().__init__(
            f"matrix is not positive semidefinite: eigenvalue {self.eigenvalue:.6g} < -{self.tol:.3g}"
        )


class PreconditionError(MSDAError, ValueError):
    pass


class DegenerateInputError(MSDAError, ValueError):
    pass


class OffsetError(MSDAError, ValueError):
    pass


class DivergenceError(MSDAError, ArithmeticError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at step {step} (loss {loss:.6g})")
