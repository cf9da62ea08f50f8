#!/usr/bin/env python3
"""Misbehaving external model: answers every request with a non-JSON line."""
import sys

for _ in sys.stdin:
    print("hello", flush=True)
