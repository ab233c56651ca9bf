"""Exception hierarchy.

Every domain failure raises a subclass of :class:`PairScoreError`; the class
name is the machine-readable error code printed by the command line tool.
"""


class PairScoreError(Exception):
    """Base class for all domain errors raised by the package."""

    @property
    def code(self) -> str:
        return type(self).__name__


# SMILES parsing
class SmilesError(PairScoreError, ValueError):
    pass


class EmptyInput(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnmatchedRingBond(SmilesError):
    pass


class UnknownSymbol(SmilesError):
    pass


# datasets and loading
class FileNotFound(PairScoreError, FileNotFoundError):
    pass


class MalformedHeader(PairScoreError, ValueError):
    pass


class MalformedRow(PairScoreError, ValueError):
    pass


class EmptyDataset(PairScoreError, ValueError):
    pass


class DuplicateKey(PairScoreError, ValueError):
    pass


class RaggedRows(PairScoreError, ValueError):
    pass


class LabelOutOfRange(PairScoreError, ValueError):
    pass


class DuplicateTriple(PairScoreError, ValueError):
    pass


class DegenerateSplit(PairScoreError, ValueError):
    pass


class InsufficientSpace(PairScoreError, ValueError):
    pass


# batching
class UnresolvableIdentifier(PairScoreError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


# numeric core
class ShapeMismatch(PairScoreError, ValueError):
    pass


class DisconnectedParameter(PairScoreError, ValueError):
    pass


# models
class UnknownModel(PairScoreError, ValueError):
    pass


class WidthMismatch(PairScoreError, ValueError):
    pass


class MissingBatchField(PairScoreError, ValueError):
    pass


# training and evaluation
class NonFiniteLoss(PairScoreError, FloatingPointError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value


class SingleClass(PairScoreError, ValueError):
    pass


class NoPositives(PairScoreError, ValueError):
    pass


class TooFewRepeats(PairScoreError, ValueError):
    pass


class MissingCalibration(PairScoreError, ValueError):
    pass


class CheckpointError(PairScoreError, ValueError):
    pass
