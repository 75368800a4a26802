"""Exception hierarchy shared across the package.

Each error class maps to a CLI exit code: config problems exit 2, data
problems exit 3, numeric failures exit 4.
"""


class RiskseqError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(RiskseqError):
    exit_code = 2
    kind = "config"


class DataError(RiskseqError):
    exit_code = 3
    kind = "data"


class NumericError(RiskseqError):
    exit_code = 4
    kind = "numeric"
