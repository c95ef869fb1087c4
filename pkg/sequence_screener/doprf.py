"""
Threshold distributed oblivious PRF.

A client blinds M(x) with a fresh beta, each server in a size-t set L raises the
blinded point to k_i * lambda_i^{L,0}, and the client multiplies the answers and
removes beta. The result is M(x)^k; no server sees x or the output.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .certs import sign_request
from .config import Config
from .encoding import b64d, b64e
from .errors import (EpochMismatch, MalformedPoint, NotInEvaluationSet, QuorumUnavailable,
                     ShareCountMismatch, Unreachable, ZeroBlind)
from .group import GroupElement, PrimeOrderGroup, Scalar, scalar_invert
from .sharing import lagrange_coefficients

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlindedPoint:
    point: GroupElement
    server_set: FrozenSet[int]


@dataclass(frozen=True)
class EvaluatedShare:
    server_index: int
    point: GroupElement


@dataclass(frozen=True)
class HashedWindow:
    data: bytes
    window_kind: str

    def __repr__(self):
        return f"HashedWindow({self.window_kind}, {self.data.hex()[:16]}…)"


def blind(x: bytes, beta: Scalar, group: PrimeOrderGroup) -> GroupElement:
    return blind_element(group.hash_to_group(x), beta)


def blind_element(element: GroupElement, beta: Scalar) -> GroupElement:
    if beta.value == 0:
        raise ZeroBlind("Blinding exponent must be nonzero")
    return element ** beta


def evaluation_exponent(L: Sequence[int], i: int, k_i: Scalar) -> Scalar:
    """k_i * lambda_i^{L,0}; validates membership of i in L."""
    indices = list(L)
    if i not in indices:
        raise NotInEvaluationSet(f"Server {i} is not in evaluation set {sorted(indices)}")
    lam = lagrange_coefficients(indices, 0, k_i.modulus)[indices.index(i)]
    return k_i * lam


def evaluate_share(X: GroupElement, L: Sequence[int], i: int, k_i: Scalar) -> EvaluatedShare:
    return EvaluatedShare(i, X ** evaluation_exponent(L, i, k_i))


def combine_shares(shares: Sequence[EvaluatedShare], server_set: Sequence[int]) -> GroupElement:
    """Product of the Y_i, checked against the evaluation set."""
    expected = set(server_set)
    indices = [s.server_index for s in shares]
    if len(shares) != len(expected) or set(indices) != expected or len(set(indices)) != len(indices):
        raise ShareCountMismatch(f"Expected one share from each of {sorted(expected)}, got {sorted(indices)}")
    product = shares[0].point
    for s in shares[1:]:
        product = product * s.point
    return product


def unblind_combine(shares: Sequence[EvaluatedShare], beta: Scalar, window_kind: str = '',
                    server_set: Optional[Sequence[int]] = None) -> HashedWindow:
    server_set = server_set if server_set is not None else [s.server_index for s in shares]
    if not shares:
        raise ShareCountMismatch("No evaluated shares to combine")
    Y = combine_shares(shares, server_set) ** scalar_invert(beta)
    return HashedWindow(Y.encode(), window_kind)


def encode_points(points: Sequence[GroupElement]) -> List[str]:
    return [b64e(p.encode()) for p in points]


def decode_points(encoded: Sequence[str], group: PrimeOrderGroup) -> List[GroupElement]:
    points = []
    for text in encoded:
        try:
            data = b64d(text)
        except ValueError as e:
            raise MalformedPoint(str(e))
        points.append(group.decode(data))
    return points


class DoprfClient:
    """Runs the client side of the protocol against a set of keyserver handles"""

    def __init__(self, group: PrimeOrderGroup, keyservers: Sequence, t: int,
                 batch_size: int = None, randomness=None, subset: Optional[Sequence[int]] = None,
                 identity=None, prefer_latency: bool = True,
                 max_workers: Optional[int] = None):
        """
        Initialize the client.

        Args:
            group: Group the keyservers operate in
            keyservers: Handles exposing status() and evaluate(payload)
            t: Threshold
            batch_size: Maximum blinded points per request (default from Config)
            randomness: Seedable random source for blinding exponents
            subset: Fixed server indices to use instead of latency ordering
            identity: SigningIdentity whose chain signs every request
            prefer_latency: Order healthy servers by status latency, else by index
            max_workers: Fan-out threads; 1 evaluates servers sequentially
        """
        self.group = group
        self.keyservers = list(keyservers)
        self.t = t
        self.batch_size = batch_size or Config.BATCH_SIZE
        self.randomness = randomness
        self.subset = list(subset) if subset else None
        self.identity = identity
        self.prefer_latency = prefer_latency
        self.max_workers = max_workers or t

    # Probing

    def select_quorum(self, key_id: Optional[str] = None, epoch: Optional[int] = None) -> Tuple[str, int, List]:
        """
        Query every keyserver's status and pick the key to evaluate under.

        Returns:
            (key_id, epoch, healthy handles in preference order)
        """
        reachable = []
        for handle in self.keyservers:
            started = time.perf_counter()
            try:
                status = handle.status()
            except Unreachable:
                logger.warning("Keyserver %s unreachable during quorum selection", handle.endpoint)
                continue
            reachable.append((time.perf_counter() - started, status, handle))

        if len(reachable) < self.t:
            raise QuorumUnavailable(f"Only {len(reachable)} keyservers reachable, need {self.t}")

        groups: Dict[Tuple[str, int], List] = {}
        for latency, status, handle in reachable:
            keys = {status.get('key_id'): status.get('epoch')}
            if key_id is not None:
                # pending keys count only when asked for by name
                keys = status.get('keys', keys)
            for held_key, held_epoch in keys.items():
                if held_key is None:
                    continue
                if key_id is not None and held_key != key_id:
                    continue
                if epoch is not None and held_epoch != epoch:
                    continue
                pending = held_key != status.get('key_id')
                groups.setdefault((held_key, held_epoch), []).append((pending, latency, status['index'], handle))

        viable = {k: v for k, v in groups.items() if len(v) >= self.t}
        if not viable:
            raise EpochMismatch(
                f"{len(reachable)} keyservers reachable but fewer than {self.t} agree on a key epoch"
            )
        chosen_key, chosen_epoch = max(viable, key=lambda k: (k[1], len(viable[k])))
        members = viable[(chosen_key, chosen_epoch)]
        # servers still holding the key as pending go last
        if self.prefer_latency:
            members.sort(key=lambda m: (m[0], m[1], m[2]))
        else:
            members.sort(key=lambda m: (m[0], m[2]))
        handles = [(index, handle) for _, _, index, handle in members]
        if self.subset:
            wanted = {index: handle for index, handle in handles}
            handles = [(i, wanted[i]) for i in self.subset if i in wanted] + \
                      [(i, h) for i, h in handles if i not in self.subset]
        return chosen_key, chosen_epoch, handles

    # Evaluation

    def doprf_eval(self, x: bytes, window_kind: str = '') -> HashedWindow:
        return self.eval_batch([x], [window_kind])[0]

    def eval_batch(self, inputs: Sequence[bytes], kinds: Optional[Sequence[str]] = None) -> List[HashedWindow]:
        """Evaluate many inputs; equal to evaluating each one on its own."""
        kinds = list(kinds) if kinds is not None else [''] * len(inputs)
        elements = [self.group.hash_to_group(x) for x in inputs]
        outputs = self.eval_elements(elements)
        return [HashedWindow(y.encode(), kind) for y, kind in zip(outputs, kinds)]

    def eval_elements(self, elements: Sequence[GroupElement], key_id: Optional[str] = None,
                      epoch: Optional[int] = None) -> List[GroupElement]:
        """Raise already-mapped group elements to the shared key obliviously."""
        if not elements:
            return []
        key_id, epoch, handles = self.select_quorum(key_id, epoch)
        results: List[GroupElement] = []
        for start in range(0, len(elements), self.batch_size):
            chunk = elements[start:start + self.batch_size]
            results.extend(self._eval_chunk(chunk, key_id, epoch, handles))
        return results

    def _eval_chunk(self, chunk: Sequence[GroupElement], key_id: str, epoch: int,
                    handles: List) -> List[GroupElement]:
        betas = [self.group.random_scalar(self.randomness) for _ in chunk]
        blinded = [blind_element(element, beta) for element, beta in zip(chunk, betas)]
        encoded = encode_points(blinded)

        n = len(self.keyservers)
        failed = set()
        for attempt in range(max(1, n - self.t + 1)):
            live = [(i, h) for i, h in handles if i not in failed]
            if len(live) < self.t:
                break
            chosen = live[:self.t]
            L = sorted(i for i, _ in chosen)
            payload = {
                'version': Config.PROTOCOL_VERSION,
                'key_id': key_id,
                'epoch': epoch,
                'L': L,
                'points': encoded,
            }
            if self.identity is not None:
                payload = sign_request(payload, self.identity)
            answers, errors = self._fan_out(chosen, payload)
            if errors:
                failed.update(errors)
                logger.warning("Evaluation attempt %d failed at servers %s; retrying", attempt + 1, sorted(errors))
                continue
            return self._unblind(answers, betas, L)
        raise QuorumUnavailable(f"Could not complete evaluation with {self.t} servers; failed: {sorted(failed)}")

    def _fan_out(self, chosen: List, payload: Dict) -> Tuple[Dict[int, List[GroupElement]], set]:
        def call(item):
            index, handle = item
            response = handle.evaluate(payload)
            if response.get('server_index') != index:
                raise ShareCountMismatch(f"Server {index} answered as {response.get('server_index')}")
            points = decode_points(response['points'], self.group)
            if len(points) != len(payload['points']):
                raise ShareCountMismatch(f"Server {index} returned {len(points)} points")
            return index, points

        answers, errors = {}, set()
        if self.max_workers <= 1:
            outcomes = [self._guarded(call, item) for item in chosen]
        else:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                outcomes = list(pool.map(lambda item: self._guarded(call, item), chosen))
        for (index, _), outcome in zip(chosen, outcomes):
            if isinstance(outcome, Unreachable):
                errors.add(index)
            else:
                answers[outcome[0]] = outcome[1]
        return answers, errors

    @staticmethod
    def _guarded(call, item):
        try:
            return call(item)
        except Unreachable as e:
            return e

    def _unblind(self, answers: Dict[int, List[GroupElement]], betas: List[Scalar], L: List[int]) -> List[GroupElement]:
        outputs = []
        for position, beta in enumerate(betas):
            shares = [EvaluatedShare(i, answers[i][position]) for i in L]
            outputs.append(combine_shares(shares, L) ** scalar_invert(beta))
        return outputs
