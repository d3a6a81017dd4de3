def add(x, y):
    s = x + y
    return s
