"""Shared exception types."""


class ContractError(ValueError):
    """A caller violated an operation precondition."""
