import math

from .errors import DivergenceError


class Monitor:
    """Outer-loop stopping: validation early stopping, else relative objective change.

    With a validation set the best-scoring snapshot is kept and training stops
    after ``patience`` epochs without improvement. Without one, training stops
    once the objective changes by less than ``tol`` relative to the previous epoch.
    """

    def __init__(self, tol, patience, has_validation):
        self.tol = tol
        self.patience = patience
        self.has_validation = has_validation
        self.prev = None
        self.best = math.inf
        self.best_epoch = -1
        self.snapshot = None
        self.bad = 0

    def update(self, epoch, objective, val_rmse, snapshot_fn):
        """Record one epoch. Returns True when training should stop."""
        if not math.isfinite(objective):
            raise DivergenceError(epoch, objective)
        stop = False
        if self.has_validation:
            if val_rmse < self.best:
                self.best = val_rmse
                self.best_epoch = epoch
                self.snapshot = snapshot_fn()
                self.bad = 0
            else:
                self.bad += 1
                stop = self.bad >= self.patience
        elif self.prev is not None:
            stop = abs(self.prev - objective) <= self.tol * max(abs(self.prev), 1e-300)
        self.prev = objective
        return stop
