"""
Round-structured key management among keyservers.

Each keyserver owns a ``RoundHandler`` that answers admin round messages:

    dkg.deal / reshare.deal / mul.deal   dealer computes sub-shares and sends
                                         ``*.subshare`` straight to each peer
    *.subshare                           receiver stores one sub-share
    *.finalize                           receiver sums its sub-shares and installs the key
    rotate.commit / rotate.abort         switch to a rotated key or discard its pieces

The coordinator functions below drive these rounds. They only ever see
acknowledgements; sub-shares never pass through the coordinator.
"""
import logging
import re
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .config import Config
from .encoding import b64d, b64e
from .errors import (DegreeReductionImpossible, DkgAborted, EpochMismatch, MalformedScalar,
                     ReshareImpossible, RotationIncomplete, ScreenerError, UnknownRound, Unreachable)
from .group import Scalar
from .sharing import (KeyShare, SharingConfig, deal, product_contribution, reshare_contribution,
                      sum_subshares)

logger = logging.getLogger(__name__)

ROUNDS = (
    'dkg.deal', 'dkg.subshare', 'dkg.finalize',
    'reshare.deal', 'reshare.subshare', 'reshare.finalize',
    'mul.deal', 'mul.subshare', 'mul.finalize',
    'rotate.commit', 'rotate.abort', 'round.abort',
)

_INCOMPLETE = {
    'dkg': DkgAborted,
    'reshare': ReshareImpossible,
    'mul': DegreeReductionImpossible,
}


@dataclass
class _Session:
    kind: str
    received: Dict[int, Scalar] = field(default_factory=dict)


class RoundHandler:
    """Answers round messages on behalf of one keyserver"""

    def __init__(self, keyserver):
        self.keyserver = keyserver
        self._sessions: Dict[str, _Session] = {}
        self._lock = threading.Lock()

    @property
    def index(self) -> int:
        return self.keyserver.index

    def participate(self, msg: Dict) -> Dict:
        name = msg.get('round')
        if name not in ROUNDS:
            raise UnknownRound(f"Unknown round message: {name}")
        if msg.get('to') != self.index:
            raise UnknownRound(f"Message for server {msg.get('to')} delivered to server {self.index}")
        kind, step = name.split('.')
        if step == 'subshare':
            return self._receive(kind, msg)
        if step == 'deal':
            return getattr(self, f'_deal_{kind}')(msg)
        if step == 'finalize':
            return self._finalize(kind, msg)
        if name == 'rotate.commit':
            return self._commit(msg)
        return self._abort(msg)

    # Dealer side

    def _deal_dkg(self, msg: Dict) -> Dict:
        p = self.keyserver.group.order
        secret = Scalar(self.keyserver.randomness.randrange(p), p)
        subshares = deal(secret, int(msg['t']), msg['recipients'], self.keyserver.randomness)
        return self._send('dkg', msg, subshares)

    def _deal_reshare(self, msg: Dict) -> Dict:
        own = self._require(msg['key_id'], int(msg['epoch']))
        subshares = reshare_contribution(own, msg['holders'], int(msg['t']), msg['recipients'],
                                         self.keyserver.randomness)
        return self._send('reshare', msg, subshares)

    def _deal_mul(self, msg: Dict) -> Dict:
        a = self._require(msg['key_a'], int(msg['epoch_a']))
        b = self._require(msg['key_b'], int(msg['epoch_b']))
        subshares = product_contribution(a, b, msg['dealers'], int(msg['t']), msg['recipients'],
                                         self.keyserver.randomness)
        return self._send('mul', msg, subshares)

    def _require(self, key_id: str, epoch: int) -> KeyShare:
        held = self.keyserver.key(key_id)
        if held is None or held.epoch != epoch:
            raise EpochMismatch(f"Server {self.index} holds no share of {key_id} at epoch {epoch}")
        return held

    def _send(self, kind: str, msg: Dict, subshares: Dict[int, Scalar]) -> Dict:
        for j, value in sorted(subshares.items()):
            message = {
                'round': f'{kind}.subshare',
                'to': j,
                'session': msg['session'],
                'dealer': self.index,
                'value': b64e(value.to_bytes()),
            }
            if j == self.index:
                self._receive(kind, message)
            else:
                self.keyserver.peer(j).round(message)
        return {'ok': True, 'server_index': self.index, 'delivered': sorted(subshares)}

    # Receiver side

    def _receive(self, kind: str, msg: Dict) -> Dict:
        try:
            value = Scalar.from_bytes(b64d(msg['value']), self.keyserver.group.order)
        except ValueError as e:
            raise MalformedScalar(str(e))
        with self._lock:
            session = self._sessions.setdefault(msg['session'], _Session(kind))
            if session.kind != kind:
                raise UnknownRound(f"Session {msg['session']} is a {session.kind} session")
            session.received[int(msg['dealer'])] = value
        return {'ok': True, 'server_index': self.index}

    def _minimum_dealers(self, kind: str) -> int:
        t = self.keyserver.t
        return 2 * t - 1 if kind == 'mul' else t

    def _finalize(self, kind: str, msg: Dict) -> Dict:
        dealers = [int(d) for d in msg.get('dealers') or []]
        with self._lock:
            session = self._sessions.pop(msg['session'], None)
        received = session.received if session else {}
        error = _INCOMPLETE[kind]
        if len(set(dealers)) != len(dealers):
            raise error(f"Duplicate dealer in {dealers}")
        if len(dealers) < self._minimum_dealers(kind):
            raise error(f"{kind} round needs at least {self._minimum_dealers(kind)} dealers, got {len(dealers)}")
        missing = sorted(set(dealers) - set(received))
        if missing:
            raise error(f"Server {self.index} is missing sub-shares from {missing}")
        unexpected = sorted(set(received) - set(dealers))
        if unexpected:
            raise error(f"Server {self.index} received sub-shares from {unexpected} outside the dealer set")
        value = sum_subshares({d: received[d] for d in dealers}, self.keyserver.group.order)
        share = KeyShare(self.index, value, int(msg['epoch']), msg['key_id'])
        self.keyserver.install(share, activate=bool(msg.get('activate', False)))
        logger.info("Server %d finalized %s round: key %s epoch %d", self.index, kind, share.key_id, share.epoch)
        return {'ok': True, 'server_index': self.index, 'key_id': share.key_id, 'epoch': share.epoch}

    # Rotation

    def _commit(self, msg: Dict) -> Dict:
        self.keyserver.activate(msg['key_id'], drop=msg.get('drop', []))
        return {'ok': True, 'server_index': self.index, 'key_id': msg['key_id']}

    def _abort(self, msg: Dict) -> Dict:
        with self._lock:
            self._sessions.pop(msg.get('session'), None)
        for key_id in msg.get('drop', []):
            self.keyserver.drop(key_id)
        return {'ok': True, 'server_index': self.index}


# Coordinators

def _statuses(participants: Mapping[int, object]) -> Dict[int, Dict]:
    live = {}
    for index, handle in sorted(participants.items()):
        try:
            live[index] = handle.status()
        except Unreachable:
            logger.warning("Keyserver %d unreachable", index)
    return live


def _broadcast_abort(participants: Mapping[int, object], indices, session: str, drop: Sequence[str] = ()):
    for index in indices:
        try:
            participants[index].round({'round': 'round.abort', 'to': index, 'session': session, 'drop': list(drop)})
        except ScreenerError:
            pass


def distributed_keygen(participants: Mapping[int, object], cfg: SharingConfig, key_id: str = 'k0',
                       epoch: int = 0, activate: bool = True) -> Dict[int, Dict]:
    """
    Additive-contribution key generation among all n participants.

    Returns:
        Per-party finalize acknowledgements (key id and epoch, never share values)

    Raises:
        DkgAborted: a participant is missing or fails during the rounds
    """
    cfg.validate()
    indices = cfg.indices
    if sorted(participants) != indices:
        raise DkgAborted(f"Key generation needs all {cfg.n} participants")
    session = f'dkg:{key_id}:{epoch}'
    try:
        for i in indices:
            participants[i].round({'round': 'dkg.deal', 'to': i, 'session': session, 't': cfg.t,
                                   'recipients': indices})
        results = {}
        for j in indices:
            results[j] = participants[j].round({'round': 'dkg.finalize', 'to': j, 'session': session,
                                                'key_id': key_id, 'epoch': epoch, 'dealers': indices,
                                                'activate': activate})
    except ScreenerError as e:
        logger.warning("Key generation %s aborted: %s", session, e.message)
        _broadcast_abort(participants, indices, session, drop=[key_id] if not activate else [])
        raise DkgAborted(f"Key generation aborted: {e.message}")
    logger.info("Generated key %s at epoch %d across %d servers", key_id, epoch, cfg.n)
    return results


def _active_quorum(live: Dict[int, Dict]) -> Tuple[Optional[str], int, List[int]]:
    by_key: Dict[Tuple[str, int], List[int]] = {}
    for index, status in live.items():
        if status.get('key_id') is not None:
            by_key.setdefault((status['key_id'], status['epoch']), []).append(index)
    if not by_key:
        return None, -1, []
    (key_id, epoch), holders = max(by_key.items(), key=lambda item: (item[0][1], len(item[1])))
    return key_id, epoch, sorted(holders)


def proactive_reshare(participants: Mapping[int, object], cfg: SharingConfig) -> Tuple[str, int]:
    """
    Move the active key to the next epoch.

    t live holders of the current epoch each deal sub-shares of
    lambda_i * k_i to every live server, including ones that missed earlier
    epochs.

    Returns:
        (key_id, new epoch)
    """
    live = _statuses(participants)
    key_id, epoch, holders = _active_quorum(live)
    if len(holders) < cfg.t:
        raise ReshareImpossible(f"Only {len(holders)} live holders of the current epoch, need {cfg.t}")
    dealers = holders[:cfg.t]
    recipients = sorted(live)
    new_epoch = epoch + 1
    session = f'reshare:{key_id}:{new_epoch}'
    try:
        for i in dealers:
            participants[i].round({'round': 'reshare.deal', 'to': i, 'session': session, 'key_id': key_id,
                                   'epoch': epoch, 'holders': dealers, 'recipients': recipients, 't': cfg.t})
        for j in recipients:
            participants[j].round({'round': 'reshare.finalize', 'to': j, 'session': session, 'key_id': key_id,
                                   'epoch': new_epoch, 'dealers': dealers, 'activate': True})
    except ScreenerError as e:
        _broadcast_abort(participants, recipients, session)
        raise ReshareImpossible(f"Resharing aborted: {e.message}")
    logger.info("Reshared key %s to epoch %d (dealers %s, recipients %s)", key_id, new_epoch, dealers, recipients)
    return key_id, new_epoch


def share_mul_reduce(participants: Mapping[int, object], cfg: SharingConfig, key_a: Tuple[str, int],
                     key_b: Tuple[str, int], new_key_id: str, new_epoch: int) -> List[int]:
    """
    Give every live server a degree-(t-1) share of a*b as a pending key.

    Returns:
        Indices of the servers now holding the product key
    """
    cfg.validate()
    if cfg.n < 2 * cfg.t - 1:
        raise DegreeReductionImpossible(f"n={cfg.n} is below 2t-1={2 * cfg.t - 1}")
    live = _statuses(participants)
    holders = sorted(
        i for i, status in live.items()
        if status.get('keys', {}).get(key_a[0]) == key_a[1] and status.get('keys', {}).get(key_b[0]) == key_b[1]
    )
    if len(holders) < 2 * cfg.t - 1:
        raise DegreeReductionImpossible(f"Only {len(holders)} servers hold both operands, need {2 * cfg.t - 1}")
    dealers = holders[:2 * cfg.t - 1]
    recipients = sorted(live)
    session = f'mul:{new_key_id}:{new_epoch}'
    try:
        for i in dealers:
            participants[i].round({'round': 'mul.deal', 'to': i, 'session': session,
                                   'key_a': key_a[0], 'epoch_a': key_a[1], 'key_b': key_b[0], 'epoch_b': key_b[1],
                                   'dealers': dealers, 'recipients': recipients, 't': cfg.t})
        for j in recipients:
            participants[j].round({'round': 'mul.finalize', 'to': j, 'session': session, 'key_id': new_key_id,
                                   'epoch': new_epoch, 'dealers': dealers, 'activate': False})
    except ScreenerError as e:
        _broadcast_abort(participants, recipients, session, drop=[new_key_id])
        raise DegreeReductionImpossible(f"Product round aborted: {e.message}")
    return recipients


def next_key_id(key_id: str) -> str:
    match = re.match(r'^(.*?)(\d+)$', key_id)
    if match:
        return f'{match.group(1)}{int(match.group(2)) + 1}'
    return f'{key_id}1'


def rotate_key(participants: Mapping[int, object], cfg: SharingConfig, database) -> Tuple[str, int]:
    """
    Replace the active key k with k * delta and re-key the database table.

    Steps: generate the update key delta by key generation, derive shares of
    k * delta, let the database re-key its table through the delta shares, then
    commit the new key everywhere and erase k and delta.

    Returns:
        (new key id, new epoch)

    Raises:
        RotationIncomplete: the table was re-keyed but some servers never confirmed the commit
    """
    live = _statuses(participants)
    if len(live) != cfg.n:
        raise DkgAborted(f"Rotation needs all {cfg.n} keyservers; {len(live)} reachable")
    key_id, epoch, holders = _active_quorum(live)
    if len(holders) != cfg.n:
        raise EpochMismatch("Keyservers disagree on the active key; reshare before rotating")
    update_id = f'{key_id}.update{epoch + 1}'
    new_key_id, new_epoch = next_key_id(key_id), epoch + 1
    indices = cfg.indices
    try:
        distributed_keygen(participants, cfg, key_id=update_id, epoch=epoch, activate=False)
        share_mul_reduce(participants, cfg, (key_id, epoch), (update_id, epoch), new_key_id, new_epoch)
        database.rekey({'update_key_id': update_id, 'update_epoch': epoch,
                        'key_id': new_key_id, 'epoch': new_epoch})
    except ScreenerError:
        _broadcast_abort(participants, indices, f'rotate:{new_key_id}', drop=[update_id, new_key_id])
        raise
    # The table is under the new key from here on; servers can only move forward.
    pending = commit_rotation(participants, indices, new_key_id, drop=[key_id, update_id])
    if pending:
        raise RotationIncomplete(f"Keyservers {pending} have not switched to {new_key_id}; "
                                 f"run finish_rotation once they are back",
                                 key_id=new_key_id, epoch=new_epoch, pending=pending)
    logger.info("Rotated key %s -> %s (epoch %d)", key_id, new_key_id, new_epoch)
    return new_key_id, new_epoch


def commit_rotation(participants: Mapping[int, object], indices: Sequence[int], key_id: str,
                    drop: Sequence[str] = (), attempts: int = None) -> List[int]:
    """
    Tell every server in ``indices`` to serve ``key_id``, retrying failures.

    Returns:
        Indices that still have not confirmed after all attempts
    """
    pending = list(indices)
    for attempt in range(attempts or Config.COMMIT_ATTEMPTS):
        failed = []
        for i in pending:
            try:
                participants[i].round({'round': 'rotate.commit', 'to': i, 'key_id': key_id, 'drop': list(drop)})
            except ScreenerError as e:
                logger.warning("Commit of %s on server %d failed (attempt %d): %s", key_id, i, attempt + 1, e.message)
                failed.append(i)
        pending = failed
        if not pending:
            break
    return pending


def finish_rotation(participants: Mapping[int, object]) -> Tuple[Optional[str], List[int]]:
    """
    Switch servers left behind by an interrupted rotation to the rotated key.

    A server is behind when it holds the newest active key as a pending share
    while still serving an older one.

    Returns:
        (rotated key id, indices committed now)
    """
    live = _statuses(participants)
    key_id, epoch, holders = _active_quorum(live)
    if key_id is None:
        return None, []
    behind = sorted(i for i, status in live.items()
                    if status.get('key_id') != key_id and status.get('keys', {}).get(key_id) == epoch)
    stale = {i: [k for k in live[i].get('keys', {}) if k != key_id] for i in behind}
    committed = []
    for i in behind:
        if not commit_rotation(participants, [i], key_id, drop=stale[i]):
            committed.append(i)
    if committed:
        logger.info("Finished rotation to %s on servers %s", key_id, committed)
    return key_id, committed
