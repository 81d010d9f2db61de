import re

VERIFIER_SPECS = [
    {"name": "first_int_even", "description": "the first integer in the output is even", "requires": []},
]

def first_int_even(x, y, context=None):
    m = re.search(r"-?\d+", y)
    return m is not None and int(m.group(0)) % 2 == 0

def aggregate(checks, x, y, context=None):
    return all(checks.values())
