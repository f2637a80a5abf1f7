"""Exception types raised across the package."""


class RgemError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(RgemError, ValueError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, msg="matrix is not positive definite", cluster=None):
        super().__init__(msg)
        self.cluster = cluster


class EmptyCluster(RgemError):
    """A component received (numerically) zero responsibility mass."""

    def __init__(self, cluster, mass):
        super().__init__(f"cluster {cluster} has responsibility mass {mass:.3g}")
        self.cluster = cluster
        self.mass = mass


class ClusterCollapse(RgemError):
    """The same component collapsed too many times during a fit."""


class DegenerateData(RgemError, ValueError):
    """Too few distinct observations for the requested number of clusters."""


class InvalidParam(RgemError, ValueError):
    pass


class LengthMismatch(RgemError, ValueError):
    pass


class KMismatch(RgemError, ValueError):
    pass
