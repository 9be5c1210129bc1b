"""Exception hierarchy shared across the package.

CLI exit codes: InstruxError subclasses map to 2 (data/schema) unless they
derive from NumericError (3); argparse usage failures are 1.
"""


class InstruxError(Exception):
    """Base class for every structured error raised by this package."""


# --- instruction grammar ---------------------------------------------------

class InstructionError(InstruxError):
    """Any failure while parsing or validating an instruction string."""


class MissingArrow(InstructionError):
    pass


class MultipleArrows(InstructionError):
    pass


class UnbalancedBracket(InstructionError):
    pass


class UnknownSlotType(InstructionError):
    pass


class BadIdentifier(InstructionError):
    pass


class EmptySentence(InstructionError):
    pass


class BadPattern(InstructionError):
    """Malformed expanded pattern (interleaved / contrastive)."""


class DuplicateRegistration(InstructionError):
    pass


# --- plan compilation / binding --------------------------------------------

class PlanError(InstruxError):
    pass


class UnboundColumn(PlanError):
    def __init__(self, column: str):
        super().__init__(f"no data bound for column '{column}'")
        self.column = column


class ClosedSetMissing(PlanError):
    pass


class UnsupportedDirection(PlanError):
    pass


class IncompatibleInstructions(PlanError):
    pass


class ArityMismatch(PlanError):
    pass


class ContrastiveUnsupported(PlanError):
    """Contrastive patterns parse but have no execution semantics."""


class UnknownHandler(PlanError):
    pass


# --- modality IO ------------------------------------------------------------

class ModalityError(InstruxError):
    pass


class OutOfBounds(ModalityError):
    pass


class EmptyStruct(ModalityError):
    pass


class RaggedTable(EmptyStruct):
    pass


class BadSudokuText(ModalityError):
    pass


class BadImage(ModalityError):
    pass


class TooShort(ModalityError):
    pass


class DegenerateInput(ModalityError):
    pass


class BadBvh(ModalityError):
    pass


# --- adapters / model -------------------------------------------------------

class ModelError(InstruxError):
    pass


class DimMismatch(ModelError):
    pass


class IdOutOfRange(ModelError):
    pass


class StepOutOfRange(ModelError):
    pass


class UnroutedModality(ModelError):
    pass


class MissingAdapter(ModelError):
    pass


# --- training / generation --------------------------------------------------

class NumericError(InstruxError):
    """Failures of numeric health (exit code 3 in the CLI)."""


class NonFiniteGradient(NumericError):
    pass


class AllMasked(InstruxError):
    pass


class ShapeMismatch(InstruxError):
    pass


class EmptyTask(InstruxError):
    pass


class EmptyTaskList(InstruxError):
    pass


class EmptyClosedSet(InstruxError):
    pass


class NoValidContinuation(InstruxError):
    pass


# --- configuration / data ---------------------------------------------------

class SchemaError(InstruxError):
    def __init__(self, path: str, message: str = ""):
        detail = f"{path}: {message}" if message else path
        super().__init__(detail)
        self.path = path


class MissingColumn(InstruxError):
    def __init__(self, column: str):
        super().__init__(f"dataset is missing column '{column}'")
        self.column = column


class MalformedRow(InstruxError):
    pass


class UnknownMetric(InstruxError):
    pass


class CheckpointError(InstruxError):
    pass
