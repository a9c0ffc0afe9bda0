"""Exception hierarchy.

Every error carries a stable ``code`` string so that logs, manifests and the
CLI exit status can classify failures without string matching on messages.
"""

from __future__ import annotations


class MCQError(Exception):
    """Base class for all pipeline errors."""

    code = "ERROR"
    exit_status = 2

    def __init__(self, detail: str = "", **context):
        self.detail = detail
        self.context = context
        msg = f"{self.code}: {detail}" if detail else self.code
        super().__init__(msg)


# -- configuration / usage (exit 1) ------------------------------------------

class ConfigError(MCQError):
    code = "CONFIG_ERROR"
    exit_status = 1


# -- data errors (exit 2) ------------------------------------------------------

class MalformedLineError(MCQError):
    code = "MALFORMED_LINE"

    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {detail}" if detail else f"line {line_no}")


class SpanMismatchError(MCQError):
    code = "SPAN_MISMATCH"


class InvariantViolation(MCQError):
    code = "INVARIANT_VIOLATION"


class EmptyFieldError(MCQError):
    code = "EMPTY_FIELD"


class AnswerNotLocated(MCQError):
    code = "ANSWER_NOT_LOCATED"


class MaskError(MCQError):
    code = "MASK_ERROR"


class NoMaskError(MaskError):
    code = "NO_MASK"


class MultipleMasksError(MaskError):
    code = "MULTIPLE_MASKS"


class EmptyStoreError(MCQError):
    code = "EMPTY_STORE"


class AmbiguousLabelError(MCQError):
    code = "AMBIGUOUS_LABEL"


class IndexOutOfRange(MCQError):
    code = "INDEX_OUT_OF_RANGE"


class BothMissingError(MCQError):
    code = "BOTH_MISSING"


class EmptyTopError(MCQError):
    code = "EMPTY_TOP"


class ProbSumViolation(MCQError):
    code = "PROB_SUM_VIOLATION"


class EmptyInputError(MCQError):
    code = "EMPTY"


class SingletonError(EmptyInputError):
    code = "EMPTY_OR_SINGLETON"


class UnknownItemError(MCQError):
    code = "UNKNOWN_ITEM"


# -- backend errors (exit 3) ---------------------------------------------------

class BackendError(MCQError):
    code = "BACKEND_ERROR"
    exit_status = 3


class TaggerError(BackendError):
    code = "TAGGER_ERROR"


class NERError(BackendError):
    code = "NER_ERROR"


class EncoderError(BackendError):
    code = "ENCODER_ERROR"


class ClientError(BackendError):
    code = "CLIENT_ERROR"
