"""Exception hierarchy shared by every module.

Class names double as the error tags printed by the CLI, so they are kept
short and stable.
"""

from __future__ import annotations


class FedAgentError(Exception):
    """Base class for all package errors."""


# core data
class DataError(FedAgentError, ValueError):
    pass


class MissingField(DataError):
    pass


class EmptySteps(DataError):
    pass


class UnknownActionType(DataError):
    pass


class InvalidSpec(DataError):
    pass


class CatalogError(DataError):
    pass


# partitioning
class PartitionError(FedAgentError, ValueError):
    pass


class InfeasibleScheme(PartitionError):
    pass


class EmptyDataset(PartitionError):
    pass


class CoverageMismatch(PartitionError):
    pass


# model / aggregation
class DimensionMismatch(FedAgentError, ValueError):
    pass


class EmptyClient(FedAgentError, ValueError):
    pass


class NoUpdates(FedAgentError, ValueError):
    pass


class ZeroTotalWeight(FedAgentError, ValueError):
    pass


class UnknownClient(FedAgentError, KeyError):
    pass


# orchestration
class NoEligibleClients(FedAgentError, ValueError):
    pass


class ConfigError(FedAgentError, ValueError):
    pass


class CorruptCheckpoint(FedAgentError, ValueError):
    pass


class VersionMismatch(FedAgentError, ValueError):
    pass


# evaluation / reporting
class EmptyCorpus(FedAgentError, ValueError):
    pass


class EmptyTestSet(FedAgentError, ValueError):
    pass


class MissingMetrics(FedAgentError, ValueError):
    pass
