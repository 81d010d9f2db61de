import re

VERIFIER_SPECS = [
    {"name": "has_boxed_int", "description": "a boxed integer is present", "requires": []},
    {"name": "first_int_even", "description": "the first integer in the output is even", "requires": []},
]

def has_boxed_int(x, y, context=None):
    return re.search(r"\\boxed\{\s*-?\d+\s*\}", y) is not None

def first_int_even(x, y, context=None):
    m = re.search(r"-?\d+", y)
    return m is not None and int(m.group(0)) % 2 == 0

def aggregate(checks, x, y, context=None):
    return all(checks.values())
