"""Learning-method labels shared by the layer learners, harness, and CLI."""

from __future__ import annotations

from enum import Enum


class ConvexMethod(str, Enum):
    """How a layer's convex program is posed and solved.

    QP minimizes the empirical risk jointly over weights and nonnegative
    function estimates. LP drops the objective and returns any feasible
    weight matrix. SLACK_LP softens the feasibility system with L1-penalized
    slacks, the intended form for noisy labels.
    """

    QP = "qp"
    LP = "lp"
    SLACK_LP = "slack-lp"

    @classmethod
    def parse(cls, value) -> "ConvexMethod":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown method {value!r}; expected one of "
                f"{[m.value for m in cls]}"
            ) from None
