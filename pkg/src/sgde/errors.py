"""Exception hierarchy shared by every sgde module.

Each class carries a short ``code`` used in the HTTP error envelope and an
``exit_code`` used by the command line tool.
"""


class SgdeError(Exception):
    code = "error"
    exit_code = 1


class ConfigurationError(SgdeError):
    code = "config_error"
    exit_code = 2


class PlanError(ConfigurationError):
    code = "plan_error"


class ShapeError(SgdeError):
    code = "shape_error"
    exit_code = 3


class NumericError(SgdeError):
    code = "numeric_error"
    exit_code = 3


class DomainError(SgdeError, ValueError):
    code = "domain_error"
    exit_code = 2


class CalibrationError(SgdeError):
    code = "calibration_error"
    exit_code = 4


class DataError(SgdeError):
    code = "data_error"
    exit_code = 3


class SchemaError(DataError):
    code = "schema_error"


class IntegrityError(SgdeError):
    code = "integrity_error"
    exit_code = 3


class PolicyError(SgdeError):
    code = "policy_error"
    exit_code = 4


class GateError(PolicyError):
    code = "gate_error"


class AuthError(PolicyError):
    code = "auth_error"


class RequestError(SgdeError):
    code = "request_error"
    exit_code = 2


class NotFoundError(SgdeError):
    code = "not_found"
    exit_code = 3


class StartupError(SgdeError):
    code = "startup_error"
    exit_code = 3
