"""
Shamir secret sharing over Z_p.

The functions here are pure: they compute shares, Lagrange coefficients and the
per-dealer contributions of key generation, resharing and share multiplication.
Message passing between keyservers lives in ``rounds``.
"""
import secrets
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .encoding import b64d, b64e
from .errors import (BadConfig, DegreeReductionImpossible, DuplicateIndex, EpochMismatch,
                     InsufficientShares, MalformedScalar, ReshareImpossible)
from .group import Scalar


@dataclass(frozen=True)
class SharingConfig:
    n: int
    t: int
    p: int

    def validate(self) -> 'SharingConfig':
        if not 0 < self.t <= self.n:
            raise BadConfig(f"Threshold t={self.t} must satisfy 0 < t <= n={self.n}")
        if self.n >= self.p:
            raise BadConfig(f"Share count n={self.n} must be smaller than the field size")
        return self

    @property
    def indices(self) -> List[int]:
        return list(range(1, self.n + 1))


@dataclass(frozen=True)
class KeyShare:
    """One server's share f(i) of a key, tagged with key id and epoch"""

    server_index: int
    value: Scalar
    epoch: int
    key_id: str

    def to_record(self) -> Dict:
        return {
            'key_id': self.key_id,
            'epoch': self.epoch,
            'server_index': self.server_index,
            'value': b64e(self.value.to_bytes()),
        }

    @classmethod
    def from_record(cls, record: Mapping, modulus: int) -> 'KeyShare':
        try:
            value = Scalar.from_bytes(b64d(record['value']), modulus)
            return cls(int(record['server_index']), value, int(record['epoch']), str(record['key_id']))
        except (KeyError, ValueError) as e:
            raise MalformedScalar(f"Invalid share record: {e}")

    def __repr__(self):
        return f"KeyShare(server_index={self.server_index}, key_id={self.key_id!r}, epoch={self.epoch})"


def _rng(randomness):
    return randomness if randomness is not None else secrets.SystemRandom()


def random_polynomial(constant: Scalar, degree: int, randomness=None) -> List[Scalar]:
    """Coefficients a_0..a_degree with a_0 = constant and the rest uniform."""
    rng = _rng(randomness)
    p = constant.modulus
    return [constant] + [Scalar(rng.randrange(p), p) for _ in range(degree)]


def eval_polynomial(coefficients: Sequence[Scalar], x: int) -> Scalar:
    result = Scalar(0, coefficients[0].modulus)
    for coefficient in reversed(coefficients):
        result = result * x + coefficient
    return result


def deal(value: Scalar, t: int, recipients: Iterable[int], randomness=None) -> Dict[int, Scalar]:
    """Shamir-share ``value`` with threshold t to the given recipient indices."""
    coefficients = random_polynomial(value, t - 1, randomness)
    return {j: eval_polynomial(coefficients, j) for j in recipients}


def share(secret: Scalar, cfg: SharingConfig, randomness=None,
          epoch: int = 0, key_id: str = 'k0') -> List[KeyShare]:
    cfg.validate()
    if secret.modulus != cfg.p:
        raise BadConfig("Secret does not live in the configured field")
    values = deal(secret, cfg.t, cfg.indices, randomness)
    return [KeyShare(i, values[i], epoch, key_id) for i in cfg.indices]


def _check_indices(indices: Sequence[int]):
    if len(set(indices)) != len(indices):
        raise DuplicateIndex(f"Duplicate server index in {sorted(indices)}")
    if any(i <= 0 for i in indices):
        raise BadConfig("Server indices must be positive")


def lagrange_coefficients(L: Sequence[int], h: int, p: int) -> List[Scalar]:
    """
    Coefficients lambda_i^{L,h} for each i in L (in the given order).

    Works for any index-set size, so it also serves degree 2(t-1) interpolation.
    """
    indices = list(L)
    _check_indices(indices)
    if h in indices:
        raise BadConfig(f"Evaluation point {h} must not be in the index set")
    coefficients = []
    for i in indices:
        numerator, denominator = 1, 1
        for j in indices:
            if j != i:
                numerator = numerator * (h - j) % p
                denominator = denominator * (i - j) % p
        coefficients.append(Scalar(numerator * pow(denominator, -1, p), p))
    return coefficients


def combine(points: Sequence[Tuple[int, Scalar]], h: int = 0) -> Scalar:
    """Interpolate (index, value) pairs at h without any epoch bookkeeping."""
    if not points:
        raise InsufficientShares("Nothing to interpolate")
    p = points[0][1].modulus
    lambdas = lagrange_coefficients([i for i, _ in points], h, p)
    return sum((lam * value for lam, (_, value) in zip(lambdas, points)), Scalar(0, p))


def reconstruct(shares: Sequence[KeyShare], cfg: SharingConfig) -> Scalar:
    if len({(s.key_id, s.epoch) for s in shares}) > 1:
        raise EpochMismatch("Shares come from different keys or epochs")
    _check_indices([s.server_index for s in shares])
    if len(shares) < cfg.t:
        raise InsufficientShares(f"Need {cfg.t} shares, got {len(shares)}")
    chosen = sorted(shares, key=lambda s: s.server_index)[:cfg.t]
    return combine([(s.server_index, s.value) for s in chosen])


# Dealer contributions of the multi-party protocols

def reshare_contribution(own: KeyShare, holders: Sequence[int], t: int, recipients: Iterable[int],
                         randomness=None) -> Dict[int, Scalar]:
    """Sub-shares of lambda_i^{L,0} * k_i for a holder i in L."""
    holders = list(holders)
    if own.server_index not in holders:
        raise BadConfig(f"Server {own.server_index} is not among the resharing holders")
    lam = lagrange_coefficients(holders, 0, own.value.modulus)[holders.index(own.server_index)]
    return deal(lam * own.value, t, recipients, randomness)


def product_contribution(a: KeyShare, b: KeyShare, dealers: Sequence[int], t: int,
                         recipients: Iterable[int], randomness=None) -> Dict[int, Scalar]:
    """
    Sub-shares of lambda_i^{L,0} * a_i * b_i.

    a_i * b_i lies on a degree-2(t-1) polynomial, so L needs 2t-1 dealers.
    """
    dealers = list(dealers)
    if len(dealers) < 2 * t - 1:
        raise DegreeReductionImpossible(f"Need {2 * t - 1} dealers to reduce a product, got {len(dealers)}")
    if a.server_index != b.server_index:
        raise BadConfig("Product operands belong to different servers")
    lam = lagrange_coefficients(dealers, 0, a.value.modulus)[dealers.index(a.server_index)]
    return deal(lam * a.value * b.value, t, recipients, randomness)


def sum_subshares(subshares: Mapping[int, Scalar], p: int) -> Scalar:
    return sum(subshares.values(), Scalar(0, p))


# In-process versions of the protocols, for analysis and tests

def local_keygen(cfg: SharingConfig, randomness=None, key_id: str = 'k0',
                 epoch: int = 0) -> Tuple[List[KeyShare], List[Scalar]]:
    """Additive-contribution key generation; returns final shares and each party's contribution."""
    cfg.validate()
    rng = _rng(randomness)
    contributions = [Scalar(rng.randrange(cfg.p), cfg.p) for _ in cfg.indices]
    received: Dict[int, Dict[int, Scalar]] = {j: {} for j in cfg.indices}
    for dealer, secret in zip(cfg.indices, contributions):
        for j, value in deal(secret, cfg.t, cfg.indices, rng).items():
            received[j][dealer] = value
    shares = [KeyShare(j, sum_subshares(received[j], cfg.p), epoch, key_id) for j in cfg.indices]
    return shares, contributions


def local_reshare(shares: Sequence[KeyShare], cfg: SharingConfig, randomness=None,
                  holders: Optional[Sequence[int]] = None) -> List[KeyShare]:
    """Reshare to all n indices using t live holders; returns epoch e+1 shares."""
    rng = _rng(randomness)
    by_index = {s.server_index: s for s in shares}
    holders = sorted(holders if holders is not None else by_index)[:cfg.t]
    if len(holders) < cfg.t:
        raise ReshareImpossible(f"Need {cfg.t} live holders, got {len(holders)}")
    source = by_index[holders[0]]
    received: Dict[int, Dict[int, Scalar]] = {j: {} for j in cfg.indices}
    for i in holders:
        for j, value in reshare_contribution(by_index[i], holders, cfg.t, cfg.indices, rng).items():
            received[j][i] = value
    return [KeyShare(j, sum_subshares(received[j], cfg.p), source.epoch + 1, source.key_id)
            for j in cfg.indices]


def local_mul_reduce(shares_a: Sequence[KeyShare], shares_b: Sequence[KeyShare], cfg: SharingConfig,
                     randomness=None, key_id: str = 'k1', epoch: int = 0) -> List[KeyShare]:
    cfg.validate()
    if cfg.n < 2 * cfg.t - 1:
        raise DegreeReductionImpossible(f"n={cfg.n} < 2t-1={2 * cfg.t - 1}")
    rng = _rng(randomness)
    a = {s.server_index: s for s in shares_a}
    b = {s.server_index: s for s in shares_b}
    dealers = sorted(set(a) & set(b))[:2 * cfg.t - 1]
    received: Dict[int, Dict[int, Scalar]] = {j: {} for j in cfg.indices}
    for i in dealers:
        for j, value in product_contribution(a[i], b[i], dealers, cfg.t, cfg.indices, rng).items():
            received[j][i] = value
    return [KeyShare(j, sum_subshares(received[j], cfg.p), epoch, key_id) for j in cfg.indices]
