class PogridError(Exception):
    """Domain error: invalid inputs or an operation that cannot be carried out."""


class ConfigError(PogridError):
    """Malformed or schema-violating configuration / input file."""
