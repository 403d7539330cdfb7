"""Regression losses with an explicit subgradient in the prediction argument."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class AbsoluteLoss:
    """l(y, yhat) = |y - yhat|. Convex, 1-Lipschitz, l(x, x) = 0."""

    kind: str = "absolute"

    def eval(self, y: float, yhat: float) -> float:
        return abs(y - yhat)

    def subgrad(self, y: float, yhat: float) -> float:
        # 0 at the kink keeps exact fits fixed
        if yhat > y:
            return 1.0
        if yhat < y:
            return -1.0
        return 0.0


LOSSES = {"absolute": AbsoluteLoss}


def get_loss(kind: str = "absolute") -> AbsoluteLoss:
    try:
        return LOSSES[kind]()
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; choose from {sorted(LOSSES)}") from None
