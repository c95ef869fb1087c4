"""
Prime-order group abstraction used by every protocol in the package.

Two families are provided:

* ``Ristretto255Group``: the production group, backed by ``oblivious`` (libsodium
  when available, pure Python otherwise) with Elligator-based hashing.
* ``ModPGroup``: the order-p subgroup of Z_q* for q = m*p + 1 prime. Small orders
  make discrete logs enumerable, which tests use as an oracle.

Groups are looked up by name through ``GroupFactory`` so configs can select one.
"""
import hashlib
import itertools
import secrets
from dataclasses import dataclass
from typing import Any, Callable, Dict, Protocol, Union

import ge25519
from oblivious import ristretto
from sympy import isprime

from .errors import BadConfig, EmptyHashInput, InversionOfZero, MalformedPoint, MalformedScalar

ELEMENT_SIZE = 32
SCALAR_SIZE = 32


@dataclass(frozen=True)
class Scalar:
    """Residue modulo a group order"""

    value: int
    modulus: int

    def __post_init__(self):
        object.__setattr__(self, 'value', self.value % self.modulus)

    def _coerce(self, other: Union['Scalar', int]) -> int:
        if isinstance(other, Scalar):
            if other.modulus != self.modulus:
                raise ValueError("Scalars from different fields")
            return other.value
        return other

    def __add__(self, other):
        return Scalar(self.value + self._coerce(other), self.modulus)

    __radd__ = __add__

    def __sub__(self, other):
        return Scalar(self.value - self._coerce(other), self.modulus)

    def __rsub__(self, other):
        return Scalar(self._coerce(other) - self.value, self.modulus)

    def __mul__(self, other):
        return Scalar(self.value * self._coerce(other), self.modulus)

    __rmul__ = __mul__

    def __neg__(self):
        return Scalar(-self.value, self.modulus)

    def __int__(self):
        return self.value

    def __bool__(self):
        return self.value != 0

    def invert(self) -> 'Scalar':
        return scalar_invert(self)

    def to_bytes(self) -> bytes:
        """32-byte little-endian residue"""
        return self.value.to_bytes(SCALAR_SIZE, 'little')

    @classmethod
    def from_bytes(cls, data: bytes, modulus: int) -> 'Scalar':
        if len(data) != SCALAR_SIZE:
            raise MalformedScalar(f"Scalar encoding must be {SCALAR_SIZE} bytes, got {len(data)}")
        value = int.from_bytes(data, 'little')
        if value >= modulus:
            raise MalformedScalar("Scalar encoding is not reduced")
        return cls(value, modulus)

    def __repr__(self):
        # Never print secret residues
        return f"Scalar(<{self.modulus.bit_length()}-bit>)"


def scalar_invert(s: Scalar) -> Scalar:
    if s.value == 0:
        raise InversionOfZero("Cannot invert zero")
    return Scalar(pow(s.value, -1, s.modulus), s.modulus)


class GroupElement:
    """Element of a prime-order group; multiplication is the group law"""

    __slots__ = ('group', 'raw')

    def __init__(self, group: 'PrimeOrderGroup', raw: Any):
        self.group = group
        self.raw = raw

    def __mul__(self, other: 'GroupElement') -> 'GroupElement':
        if other.group.name != self.group.name:
            raise ValueError("Elements from different groups")
        return GroupElement(self.group, self.group.op(self.raw, other.raw))

    def __pow__(self, exponent: Union[Scalar, int]) -> 'GroupElement':
        return group_exp(self, exponent)

    def encode(self) -> bytes:
        return self.group.encode(self.raw)

    def is_identity(self) -> bool:
        return self == self.group.identity()

    def __eq__(self, other):
        return (isinstance(other, GroupElement)
                and other.group.name == self.group.name
                and other.encode() == self.encode())

    def __hash__(self):
        return hash((self.group.name, self.encode()))

    def __repr__(self):
        return f"GroupElement({self.group.name}, {self.encode().hex()[:16]}…)"


def group_exp(g: GroupElement, s: Union[Scalar, int]) -> GroupElement:
    """g raised to s; the exponent is reduced modulo the group order."""
    exponent = int(s) % g.group.order
    return GroupElement(g.group, g.group.exp(g.raw, exponent))


class PrimeOrderGroup(Protocol):
    """Protocol for prime-order groups"""

    name: str
    order: int

    def op(self, a: Any, b: Any) -> Any:
        """Group law on raw representations"""
        ...

    def exp(self, a: Any, exponent: int) -> Any:
        ...

    def encode(self, raw: Any) -> bytes:
        ...

    def decode(self, data: bytes) -> GroupElement:
        """Canonical decoding; raises MalformedPoint"""
        ...

    def identity(self) -> GroupElement:
        ...

    def generator(self) -> GroupElement:
        ...

    def hash_to_group(self, data: bytes) -> GroupElement:
        ...

    def scalar(self, value: int) -> Scalar:
        ...

    def random_scalar(self, rng=None) -> Scalar:
        ...


class _ScalarsMixin:
    """Scalar helpers shared by the concrete groups"""

    order: int

    def scalar(self, value: int) -> Scalar:
        return Scalar(value, self.order)

    def random_scalar(self, rng=None) -> Scalar:
        """Uniform nonzero scalar; rng is a seedable random.Random or None for the OS source."""
        rng = rng or secrets.SystemRandom()
        return Scalar(rng.randrange(1, self.order), self.order)

    def hash_to_group(self, data: bytes) -> GroupElement:
        if not data:
            raise EmptyHashInput("hash_to_group needs a nonempty input")
        return GroupElement(self, self._hash(bytes(data)))


class Ristretto255Group(_ScalarsMixin):
    """Ristretto255: prime-order group over Curve25519 with 32-byte encodings"""

    name = 'ristretto255'
    order = 2 ** 252 + 27742317777372353535851937790883648493
    _IDENTITY = bytes(ELEMENT_SIZE)

    def __init__(self):
        self._native = ristretto.sodium if ristretto.sodium is not None else ristretto.python

    def op(self, a: bytes, b: bytes) -> bytes:
        if a == self._IDENTITY:
            return b
        if b == self._IDENTITY:
            return a
        return bytes(self._native.add(a, b))

    def exp(self, a: bytes, exponent: int) -> bytes:
        if exponent == 0 or a == self._IDENTITY:
            return self._IDENTITY
        return bytes(self._native.mul(exponent.to_bytes(SCALAR_SIZE, 'little'), a))

    def encode(self, raw: bytes) -> bytes:
        return raw

    def decode(self, data: bytes) -> GroupElement:
        data = bytes(data)
        if len(data) != ELEMENT_SIZE:
            raise MalformedPoint(f"Point encoding must be {ELEMENT_SIZE} bytes, got {len(data)}")
        if data != self._IDENTITY:
            p3 = ge25519.ge25519_p3.from_bytes_ristretto255(data)
            if p3 is None or p3.to_bytes_ristretto255() != data:
                raise MalformedPoint("Not a canonical ristretto255 encoding")
        return GroupElement(self, data)

    def identity(self) -> GroupElement:
        return GroupElement(self, self._IDENTITY)

    def generator(self) -> GroupElement:
        return GroupElement(self, bytes(self._native.bas((1).to_bytes(SCALAR_SIZE, 'little'))))

    def _hash(self, data: bytes) -> bytes:
        return bytes(self._native.pnt(hashlib.sha512(data).digest()))


class ModPGroup(_ScalarsMixin):
    """Order-p subgroup of the multiplicative group modulo a prime q = m*p + 1"""

    def __init__(self, order: int, name: str = None):
        if not isprime(order):
            raise BadConfig(f"Group order {order} is not prime")
        self.order = order
        self.name = name or f'modp:{order}'
        self.cofactor = next(m for m in itertools.count(2, 2) if isprime(m * order + 1))
        self.modulus = self.cofactor * order + 1
        if self.modulus >= 2 ** (8 * ELEMENT_SIZE):
            raise BadConfig(f"Group order {order} too large for {ELEMENT_SIZE}-byte encodings")
        self._generator = next(
            g for g in (pow(h, self.cofactor, self.modulus) for h in itertools.count(2)) if g != 1
        )

    def op(self, a: int, b: int) -> int:
        return a * b % self.modulus

    def exp(self, a: int, exponent: int) -> int:
        return pow(a, exponent, self.modulus)

    def encode(self, raw: int) -> bytes:
        return raw.to_bytes(ELEMENT_SIZE, 'big')

    def decode(self, data: bytes) -> GroupElement:
        if len(data) != ELEMENT_SIZE:
            raise MalformedPoint(f"Point encoding must be {ELEMENT_SIZE} bytes, got {len(data)}")
        value = int.from_bytes(data, 'big')
        if not 0 < value < self.modulus or pow(value, self.order, self.modulus) != 1:
            raise MalformedPoint("Not an element of the group")
        return GroupElement(self, value)

    def identity(self) -> GroupElement:
        return GroupElement(self, 1)

    def generator(self) -> GroupElement:
        return GroupElement(self, self._generator)

    def _hash(self, data: bytes) -> int:
        for counter in itertools.count():
            digest = hashlib.sha512(b'modp-h2g' + counter.to_bytes(4, 'big') + data).digest()
            candidate = pow(int.from_bytes(digest, 'big') % self.modulus, self.cofactor, self.modulus)
            if candidate not in (0, 1):
                return candidate


class GroupFactory:
    """Factory for selecting groups by name"""

    GROUPS: Dict[str, Callable[[], PrimeOrderGroup]] = {
        'ristretto255': Ristretto255Group,
        'modp-11': lambda: ModPGroup(11, 'modp-11'),
        'modp-small': lambda: ModPGroup(1019, 'modp-small'),
        'modp-127': lambda: ModPGroup(2 ** 127 - 1, 'modp-127'),
    }
    _instances: Dict[str, PrimeOrderGroup] = {}

    @classmethod
    def get(cls, name: str) -> PrimeOrderGroup:
        """
        Return the group registered under ``name``.

        ``modp:<prime>`` builds a residue group of that order on demand.
        """
        if name not in cls._instances:
            if name in cls.GROUPS:
                cls._instances[name] = cls.GROUPS[name]()
            elif name.startswith('modp:'):
                try:
                    order = int(name.split(':', 1)[1])
                except ValueError:
                    raise BadConfig(f"Invalid group name: {name}")
                cls._instances[name] = ModPGroup(order, name)
            else:
                raise BadConfig(f"Unknown group: {name}")
        return cls._instances[name]

    @classmethod
    def register_group(cls, name: str, builder: Callable[[], PrimeOrderGroup]):
        """Register a new group constructor"""
        cls.GROUPS[name] = builder
        cls._instances.pop(name, None)
