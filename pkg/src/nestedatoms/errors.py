"""Exception types shared across the package.

The CLI maps these onto distinct process exit codes, so keep the hierarchy
stable: anything raised while parsing input files must be a DataFormatError,
anything raised while validating user-supplied settings must be a ConfigError,
and anything raised because the numbers went bad (non-finite values, matrices
that stopped being positive definite) must be a NumericalFault.
"""


class NestedAtomsError(Exception):
    """Base class for all package errors."""


class DataFormatError(NestedAtomsError):
    """Malformed input file: bad header, ragged row, unparseable field."""


class ConfigError(NestedAtomsError):
    """Invalid configuration: out-of-range hyperparameter, bad shape, etc."""


class NumericalFault(NestedAtomsError):
    """Numerical breakdown: non-finite intermediate or failed factorization."""


class NotSpdError(NumericalFault):
    """A matrix required to be symmetric positive definite is not."""
