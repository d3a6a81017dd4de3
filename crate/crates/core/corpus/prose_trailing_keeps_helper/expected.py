def add_all(xs):
    return sum(_id(x) for x in xs)


def _id(x):
    return x
