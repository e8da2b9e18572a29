"""Exception hierarchy shared by all inertia_lab modules."""


class InertiaLabError(Exception):
    """Base class for every error raised by this package."""


class NonZeroMean(InertiaLabError, ValueError):
    """A field that must be mean-free has a non-negligible mean."""


class InvalidViscosity(InertiaLabError, ValueError):
    """Viscosity coefficients violate nu > 0, nu + lambda >= 0."""


class InvalidParameters(InertiaLabError, ValueError):
    """Physical or numerical parameters outside their admissible range."""


class NegativeDensity(InertiaLabError, ValueError):
    """Density has values below the round-off clamp threshold."""


class FloorViolation(InertiaLabError, ArithmeticError):
    """Density dropped below the numerical floor where u = m / rho is needed."""


class BlowUp(InertiaLabError, ArithmeticError):
    """A solver state grew beyond its blow-up threshold or became non-finite."""


class InsufficientCheckpoints(InertiaLabError, ValueError):
    """Too few trajectory instants for a space-time quadrature."""


class IllPreparedData(InertiaLabError):
    """Initial data fails the well-preparedness gate."""


class NonPositiveValue(InertiaLabError, ValueError):
    """A log-log fit received a value that is not strictly positive."""


class ConfigError(InertiaLabError, ValueError):
    """A run configuration is malformed or violates a module invariant."""
