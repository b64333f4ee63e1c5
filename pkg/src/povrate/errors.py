"""Exception types shared across the package."""


class PovrateError(Exception):
    """Base class for all errors raised by this package."""


# --- survey data ---

class DuplicateId(PovrateError):
    pass


class InvalidWeight(PovrateError):
    pass


class MissingQuestion(PovrateError):
    pass


class EmptyFeatureSet(PovrateError):
    pass


class InvalidExpenditure(PovrateError):
    pass


class EmptyGroup(PovrateError):
    pass


class StratificationFailure(PovrateError):
    def __init__(self, message, train_rate=None, test_rate=None, national_rate=None):
        super().__init__(message)
        self.train_rate = train_rate
        self.test_rate = test_rate
        self.national_rate = national_rate


# --- imagery ---

class CatalogUnavailable(PovrateError):
    def __init__(self, status, message=""):
        super().__init__(message or f"catalog request failed with status {status}")
        self.status = status


class CatalogParseError(PovrateError):
    pass


class NoScenesFound(PovrateError):
    pass


class AssetFetchError(PovrateError):
    pass


class RasterFormatError(PovrateError):
    pass


# --- featurization ---

class TileTooSmall(PovrateError):
    pass


class NumericalError(PovrateError):
    pass


class DuplicateCluster(PovrateError):
    pass


# --- modelling ---

class DegenerateLabels(PovrateError):
    pass


class ShapeError(PovrateError):
    pass


class DegenerateFold(PovrateError):
    pass


class MissingClusterFeatures(PovrateError):
    def __init__(self, cluster_id):
        super().__init__(f"no image feature row for cluster {cluster_id!r}")
        self.cluster_id = cluster_id


# --- evaluation ---

class InvalidRate(PovrateError):
    pass


class DegenerateVariance(PovrateError):
    pass


class RankDeficient(PovrateError):
    pass


# --- CLI / artifacts ---

class DependencyMissing(PovrateError):
    def __init__(self, command, message=""):
        super().__init__(message or f"required artifact missing; run '{command}' first")
        self.command = command


class ManifestMismatch(PovrateError):
    pass


class ConfigError(PovrateError):
    pass
