def _ordered(a, b):
    return a <= b


def is_sorted_pair(p):
    return _ordered(p[0], p[1])
