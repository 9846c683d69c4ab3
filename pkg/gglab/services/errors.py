class BudgetExceededError(RuntimeError):
    """Raised when a leaf or enumeration budget would be exceeded."""
