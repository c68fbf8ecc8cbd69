"""Exception hierarchy. Every error carries the category code reported by the CLI."""


class WdroError(Exception):
    category = "error"


class ConfigError(WdroError, ValueError):
    category = "config"


class DomainError(WdroError, ValueError):
    category = "domain"


class UnboundedError(WdroError, ArithmeticError):
    category = "unbounded"


class KinkError(WdroError, ValueError):
    category = "kink"


class NoRootError(WdroError, ArithmeticError):
    category = "no-root"
