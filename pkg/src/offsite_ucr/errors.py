"""Exception types shared across the package."""


class InfeasibleError(ValueError):
    """A scenario, user or constraint set admits no feasible point."""

    def __init__(self, message, users=None):
        super().__init__(message)
        self.users = list(users) if users is not None else []


class TransmissionFailure(InfeasibleError):
    """Secrecy rate of a user is zero, so its uplink fails."""


class ConstraintViolation(ValueError):
    """An allocation breaks one or more box/coupling constraints."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("constraint violation: " + "; ".join(self.violations))


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""
