"""Shared exception types for the jointauction package."""


class AuctionError(Exception):
    """Base class for all jointauction errors."""


class DimensionError(AuctionError):
    """Operands have incompatible shapes or lengths."""


class DomainError(AuctionError):
    """A value lies outside its admissible domain."""


class ConfigError(AuctionError):
    """Invalid or inconsistent configuration."""


class ParseError(AuctionError):
    """An input line could not be parsed."""


class SchemaError(AuctionError):
    """A parsed record is missing or mistypes a required field."""


class NumericError(AuctionError):
    """A numeric procedure failed or produced non-finite values."""
