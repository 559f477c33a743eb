"""Scalar-multiply counting for complexity experiments.

Structured operators report how many scalar multiplies each apply costs;
benchmarks read the counter instead of relying on wall time.  Counts are
accumulated into a module-level counter so instrumented code does not need
to thread a counter object through every call.  Serial use only.
"""

from contextlib import contextmanager


class OpCounter:
    __slots__ = ("mults",)

    def __init__(self):
        self.mults = 0

    def add(self, n: int):
        self.mults += int(n)

    def reset(self):
        self.mults = 0


_GLOBAL = OpCounter()


def add_mults(n: int):
    _GLOBAL.add(n)


@contextmanager
def count_mults():
    """Count multiplies inside the block; read ``.mults`` after it exits.

    Windows nest: an inner window sees only its own work, and the outer
    window absorbs the inner total.
    """
    saved = _GLOBAL.mults
    _GLOBAL.mults = 0
    window = OpCounter()
    try:
        yield window
    finally:
        window.mults = _GLOBAL.mults
        _GLOBAL.mults += saved
