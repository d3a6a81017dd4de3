def below_zero(operations):
    """Return True if the balance ever drops below zero.

    Walk the operations once.
    """
    balance = 0
    for op in operations:
        balance += op
        if balance < 0:
            return True
    return False
