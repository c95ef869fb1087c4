"""
Error types for the screening system.

Every error carries a stable ``code`` so it can cross a transport as JSON and be
raised again on the other side as the same class.
"""
from typing import Any, Dict, Type


class ScreenerError(Exception):
    """Base class for all screening errors"""

    status = 400
    exit_code = 10
    _registry: Dict[str, Type['ScreenerError']] = {}

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        ScreenerError._registry[cls.__name__] = cls

    def __init__(self, message: str = '', **extra: Any):
        self.message = message or self.code
        self.extra = extra
        for key, value in extra.items():
            setattr(self, key, value)
        super().__init__(self.message)

    @property
    def code(self) -> str:
        return type(self).__name__

    def to_payload(self) -> Dict[str, Any]:
        """Serialize to the wire representation"""
        payload = {'error': self.code, 'message': self.message}
        payload.update(self.extra)
        return payload


def from_payload(payload: Dict[str, Any]) -> ScreenerError:
    """Rebuild an error raised on the far side of a transport."""
    data = dict(payload)
    code = data.pop('error', 'ScreenerError')
    message = data.pop('message', '')
    cls = ScreenerError._registry.get(code, ScreenerError)
    return cls(message, **data)


def is_error_payload(payload: Any) -> bool:
    return isinstance(payload, dict) and 'error' in payload and 'message' in payload


# Configuration

class BadConfig(ScreenerError):
    exit_code = 9


class ProtocolMismatch(ScreenerError):
    pass


# Group arithmetic

class InversionOfZero(ScreenerError):
    pass


class EmptyHashInput(ScreenerError):
    pass


class MalformedPoint(ScreenerError):
    pass


class MalformedScalar(MalformedPoint):
    pass


# Secret sharing

class DuplicateIndex(ScreenerError):
    pass


class EpochMismatch(ScreenerError):
    status = 409
    exit_code = 7


class InsufficientShares(ScreenerError):
    pass


class DkgAborted(ScreenerError):
    status = 409


class ReshareImpossible(ScreenerError):
    status = 409


class DegreeReductionImpossible(ScreenerError):
    pass


class RotationIncomplete(ScreenerError):
    """The table is re-keyed but some keyservers have not switched to the new key"""
    status = 409


# DOPRF

class ZeroBlind(ScreenerError):
    pass


class NotInEvaluationSet(ScreenerError):
    pass


class ShareCountMismatch(ScreenerError):
    pass


class QuorumUnavailable(ScreenerError):
    status = 503
    exit_code = 4


class Unreachable(ScreenerError):
    """Transport could not deliver a request to its endpoint"""
    status = 503


# Sequences and windows

class ParseError(ScreenerError):
    exit_code = 6


class FrameError(ScreenerError):
    pass


# Database building

class TooShort(ScreenerError):
    pass


class StaleKey(ScreenerError):
    status = 409


# Keyserver

class RateLimited(ScreenerError):
    status = 429


class UnknownRound(ScreenerError):
    pass


# Database server

class InvalidCertificate(ScreenerError):
    status = 403
    exit_code = 8


class MalformedHash(ScreenerError):
    pass


class EltInvalid(ScreenerError):
    status = 403
    exit_code = 8


class EltReplayed(ScreenerError):
    status = 403
    exit_code = 8


class VersionRegression(ScreenerError):
    status = 409


class CorruptTable(ScreenerError):
    pass


class DatabaseUnreachable(ScreenerError):
    status = 503
    exit_code = 5


# Certificates and exemption tokens

class CertificateError(ScreenerError):
    status = 403
    exit_code = 8


class RoleViolation(CertificateError):
    pass


class ExpiredIssuer(CertificateError):
    pass


class BrokenSignature(CertificateError):
    pass


class Expired(CertificateError):
    pass


class UnknownRoot(CertificateError):
    pass


class EmptyExemptions(CertificateError):
    status = 400


class InvalidOfficerChain(CertificateError):
    pass


class BindingMismatch(CertificateError):
    pass


# Simulation harness

class ScenarioInvalid(ScreenerError):
    pass
