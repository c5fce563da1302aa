"""Simulated time is integer nanoseconds throughout."""

NS = 1
US = 1_000
MS = 1_000_000
S = 1_000_000_000


def to_ns(seconds: float) -> int:
    return int(round(seconds * S))


def to_ms(ns: int) -> float:
    return ns / MS
