"""Shared pytest configuration.

The whole suite is meant to be deterministic: hypothesis runs derandomized
(failures reproduce without a database) and without deadlines (the hand
rolled kernels trade speed for bit-stable arithmetic).
"""

from hypothesis import HealthCheck, settings

settings.register_profile(
    "meshadapt",
    deadline=None,
    max_examples=60,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("meshadapt")
