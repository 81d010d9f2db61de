import re

VERIFIER_SPECS = [
    {"name": "final_even", "description": "the extracted final answer is an even integer", "requires": ["final_answer"]},
]

def final_even(x, y, context=None):
    answer = (context or {}).get("final_answer")
    if answer is None:
        return False
    text = str(answer).strip()
    if not re.fullmatch(r"-?\d+", text):
        return False
    return int(text) % 2 == 0

def aggregate(checks, x, y, context=None):
    return all(checks.values())
