"""Exception hierarchy shared by the pipeline and mapped to CLI exit codes."""


class MagBNFError(Exception):
    exit_code = 1


class ConfigError(MagBNFError):
    exit_code = 1


class AssumptionError(MagBNFError):
    """A structural assumption on the field fails; ``assumption`` names it."""

    exit_code = 2

    def __init__(self, assumption, message):
        self.assumption = assumption
        super().__init__(f"Assumption {assumption} violated: {message}")


class RankAmbiguityError(AssumptionError):
    def __init__(self, message):
        super().__init__(2, "rank ambiguity: " + message)


class DegenerateWellError(AssumptionError):
    def __init__(self, message):
        super().__init__(1, "degenerate well: " + message)


class ResonanceError(AssumptionError):
    def __init__(self, alpha, alpha_prime, value, assumption=3):
        self.alpha = tuple(alpha)
        self.alpha_prime = tuple(alpha_prime)
        self.value = value
        super().__init__(assumption, f"resonant denominator for alpha={self.alpha}, "
                                     f"alpha'={self.alpha_prime} (value {value})")


class NonConvergenceError(MagBNFError):
    exit_code = 3


class AlgebraError(MagBNFError):
    """Incompatible algebra elements (tag or truncation mismatch)."""
