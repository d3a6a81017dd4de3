from collections import Counter


def most_common(xs):
    return Counter(xs).most_common(1)[0][0]
