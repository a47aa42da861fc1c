"""Exception hierarchy shared across the package."""


class LeakGuardError(Exception):
    pass


class InputError(LeakGuardError, ValueError):
    """Malformed or out-of-range input (non-finite features, bad codewords)."""


class CalibrationError(LeakGuardError):
    pass


class DegenerateEdgesError(CalibrationError):
    """Quantile edges are not strictly increasing."""


class MissingBaselineError(LeakGuardError, KeyError):
    pass


class ConfigurationError(LeakGuardError):
    pass


class ArtifactError(LeakGuardError):
    """A locked calibration artifact failed validation."""


class DigestMismatchError(ArtifactError):
    pass


class ConfigMismatchError(ArtifactError):
    pass


class ArtifactCorruptionError(ArtifactError):
    pass


class DegenerateParticlesError(LeakGuardError):
    """Every particle weight collapsed to zero."""


class LifecycleError(LeakGuardError):
    """Operation issued in a state that forbids it (after abort / finalise)."""
