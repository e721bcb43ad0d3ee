"""In-process model of the on-demand communication protocol.

Every rank is both a server (owner of a contiguous block of each layer's
parameters and gradient accumulator) and a client. Clients ``gather`` full
layers by reading owners' shards directly, and ``scatter_accumulate`` weighted
gradients by staging one message per owner into a dedicated per-client slot.
Each server runs an accumulation daemon that drains its slots. The only
barrier is :meth:`OdcGroup.finalize_minibatch`.

Two execution modes share the same state machine: a deterministic scheduler
that interleaves client sends and daemon steps from a seeded RNG
(:func:`run_schedule`), and real threads (:func:`run_threaded`).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from odcsim.errors import DeadlockError, ParameterError, ProtocolError, StateError


@dataclass(frozen=True)
class GradMessage:
    from_rank: int
    target_rank: int
    layer: str
    offset: int
    payload: np.ndarray
    weight: float = 1


@dataclass
class ShardStore:
    rank: int
    param_shard: dict[str, np.ndarray | None] = field(default_factory=dict)
    grad_shard: dict[str, np.ndarray] = field(default_factory=dict)
    accumulations: int = 0


class _Channel:
    """Single-slot ordered channel from one client to one server."""

    __slots__ = ("slot", "cond")

    def __init__(self):
        self.slot: GradMessage | None = None
        self.cond = threading.Condition()


class OdcGroup:
    """N colocated shard owners exchanging gather / scatter-accumulate messages."""

    def __init__(self, n_ranks: int, dtype=np.int64):
        if n_ranks < 1:
            raise ParameterError(f"n_ranks must be >= 1, got {n_ranks}")
        self.n = n_ranks
        self.dtype = np.dtype(dtype)
        self.ranks = [ShardStore(r) for r in range(n_ranks)]
        self.layer_sizes: dict[str, int] = {}
        self.channels = {(c, s): _Channel() for c in range(n_ranks) for s in range(n_ranks)}
        self.slot_elems = 0
        self.errors: list[ProtocolError] = []
        self.peak_staged = [0] * n_ranks
        self._staged = [0] * n_ranks
        self._staged_lock = threading.Lock()

    # -- layout ------------------------------------------------------------

    def block(self, layer_elems: int) -> int:
        return -(-layer_elems // self.n)

    def owner_range(self, layer: str, rank: int) -> tuple[int, int]:
        m = self.layer_sizes[layer]
        b = self.block(m)
        return min(m, rank * b), min(m, (rank + 1) * b)

    def owner_of(self, layer: str, index: int) -> int:
        return index // self.block(self.layer_sizes[layer])

    def register_layer(self, name: str, params: np.ndarray | int) -> None:
        """Shard a layer; pass a size instead of values to leave params uninitialized."""
        size = params if isinstance(params, (int, np.integer)) else len(params)
        if size < 1:
            raise ParameterError("layer must have at least one element")
        self.layer_sizes[name] = int(size)
        self.slot_elems = max(self.slot_elems, self.block(int(size)))
        for store in self.ranks:
            lo, hi = self.owner_range(name, store.rank)
            store.param_shard[name] = None if isinstance(params, (int, np.integer)) else np.array(params[lo:hi], dtype=self.dtype)
            store.grad_shard[name] = np.zeros(hi - lo, dtype=self.dtype)

    def buffer_bound(self) -> int:
        return self.slot_elems * self.n

    # -- gather ------------------------------------------------------------

    def gather(self, client_rank: int, layer: str) -> np.ndarray:
        """Full parameters of ``layer``; reads owners' shards, never touches their daemons."""
        self._check_rank(client_rank)
        shards = []
        for store in self.ranks:
            shard = store.param_shard.get(layer)
            if shard is None:
                raise StateError(f"rank {store.rank} has no parameters for layer {layer!r}")
            shards.append(shard)
        return np.concatenate(shards)

    # -- scatter-accumulate ------------------------------------------------

    def split(self, client_rank: int, layer: str, grad: np.ndarray, weight=1) -> list[GradMessage]:
        """Cut a full-layer gradient into one message per owner, in rank order."""
        self._check_rank(client_rank)
        if layer not in self.layer_sizes:
            raise StateError(f"unknown layer {layer!r}")
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != (self.layer_sizes[layer],):
            raise ParameterError(f"gradient for {layer!r} must have {self.layer_sizes[layer]} elements")
        msgs = []
        for owner in range(self.n):
            lo, hi = self.owner_range(layer, owner)
            if hi > lo:
                msgs.append(GradMessage(client_rank, owner, layer, 0, grad[lo:hi].copy(), weight))
        return msgs

    def try_stage(self, msg: GradMessage) -> bool:
        """Place ``msg`` in its slot if free; False means the client must wait."""
        ch = self.channels[(msg.from_rank, msg.target_rank)]
        with ch.cond:
            if ch.slot is not None:
                return False
            self._stage_locked(ch, msg)
            return True

    def stage_blocking(self, msg: GradMessage, timeout: float | None = None) -> None:
        ch = self.channels[(msg.from_rank, msg.target_rank)]
        with ch.cond:
            if not ch.cond.wait_for(lambda: ch.slot is None, timeout=timeout):
                raise DeadlockError(f"slot {msg.from_rank}->{msg.target_rank} never drained")
            self._stage_locked(ch, msg)

    def _stage_locked(self, ch: _Channel, msg: GradMessage) -> None:
        ch.slot = msg
        with self._staged_lock:
            self._staged[msg.target_rank] += len(msg.payload)
            self.peak_staged[msg.target_rank] = max(self.peak_staged[msg.target_rank], self._staged[msg.target_rank])

    def pending(self, server: int) -> list[int]:
        return [c for c in range(self.n) if self.channels[(c, server)].slot is not None]

    def daemon_step(self, server: int, client: int | None = None) -> bool:
        """Accumulate one staged message at ``server``; returns False if none was waiting."""
        clients = [client] if client is not None else range(self.n)
        for c in clients:
            ch = self.channels[(c, server)]
            with ch.cond:
                msg = ch.slot
                if msg is None:
                    continue
                try:
                    self._accumulate(msg)
                except ProtocolError as exc:
                    self.errors.append(exc)
                ch.slot = None
                with self._staged_lock:
                    self._staged[server] -= len(msg.payload)
                ch.cond.notify_all()
            return True
        return False

    def _accumulate(self, msg: GradMessage) -> None:
        store = self.ranks[msg.target_rank]
        acc = store.grad_shard.get(msg.layer)
        if acc is None:
            raise ProtocolError(f"rank {msg.target_rank} does not own layer {msg.layer!r}")
        n = len(msg.payload)
        if n > self.slot_elems:
            raise ProtocolError(f"payload of {n} elements exceeds the {self.slot_elems}-element client buffer")
        if msg.offset < 0 or msg.offset + n > len(acc):
            raise ProtocolError(f"message [{msg.offset}, {msg.offset + n}) outside shard of {len(acc)}")
        if msg.weight:
            acc[msg.offset:msg.offset + n] += msg.weight * msg.payload
        store.accumulations += 1

    def scatter_accumulate(self, client_rank: int, layer: str, grad: np.ndarray, weight=1) -> None:
        """Single-threaded convenience: stage every slice, draining a busy slot first."""
        for msg in self.split(client_rank, layer, grad, weight):
            while not self.try_stage(msg):
                self.daemon_step(msg.target_rank, msg.from_rank)

    def drain(self) -> None:
        while any(self.daemon_step(s) for s in range(self.n)):
            pass

    def finalize_minibatch(self) -> dict[str, list[np.ndarray]]:
        """The one barrier: accumulate everything in flight, return and reset accumulators."""
        self.drain()
        if self.errors:
            err = self.errors[0]
            self.errors = []
            raise err
        out = {name: [store.grad_shard[name].copy() for store in self.ranks] for name in self.layer_sizes}
        for store in self.ranks:
            for name in store.grad_shard:
                store.grad_shard[name][:] = 0
        return out

    def _check_rank(self, rank: int) -> None:
        if not 0 <= rank < self.n:
            raise ParameterError(f"rank {rank} outside [0, {self.n})")


def collective_reduce_reference(grads: Sequence[tuple[np.ndarray, float]], dtype=None) -> np.ndarray:
    """Sequential weighted sum in input order; the reduce-scatter oracle."""
    if not grads:
        raise ParameterError("no gradients to reduce")
    lengths = {len(g) for g, _ in grads}
    if len(lengths) != 1:
        raise ParameterError(f"gradient length mismatch: {sorted(lengths)}")
    first = np.asarray(grads[0][0], dtype=dtype)
    acc = np.zeros(len(first), dtype=first.dtype if dtype is None else dtype)
    for g, w in grads:
        acc = acc + w * np.asarray(g, dtype=acc.dtype)
    return acc


# --------------------------------------------------------------------------
# execution


@dataclass
class ScheduleResult:
    shards: dict[str, list[np.ndarray]]
    actions: int
    peak_staged: list[int]
    gathers: int = 0


def _expand(group: OdcGroup, client: int, program) -> list:
    """Client program: ``("gather", layer)`` or ``("scatter", layer, grad, weight)`` ops."""
    steps = []
    for op in program:
        if op[0] == "gather":
            steps.append(("gather", op[1]))
        else:
            _, layer, grad, weight = op
            steps.extend(("send", m) for m in group.split(client, layer, grad, weight))
    return steps


def run_schedule(group: OdcGroup, programs: Sequence[Sequence], rng: np.random.Generator,
                 max_actions: int = 10_000_000) -> ScheduleResult:
    """Random interleaving of client and daemon actions, replayable from ``rng``."""
    queues = [_expand(group, c, p) for c, p in enumerate(programs)]
    cursor = [0] * len(queues)
    actions = gathers = 0
    while True:
        runnable = []
        for c, q in enumerate(queues):
            if cursor[c] < len(q):
                kind, arg = q[cursor[c]]
                if kind == "gather" or group.channels[(arg.from_rank, arg.target_rank)].slot is None:
                    runnable.append(("client", c))
        runnable.extend(("server", s) for s in range(group.n) if group.pending(s))
        if not runnable:
            if any(cursor[c] < len(q) for c, q in enumerate(queues)):
                raise DeadlockError("clients blocked with no staged messages to drain")
            break
        who, idx = runnable[int(rng.integers(len(runnable)))]
        if who == "client":
            kind, arg = queues[idx][cursor[idx]]
            if kind == "gather":
                group.gather(idx, arg)
                gathers += 1
            elif not group.try_stage(arg):
                raise DeadlockError("runnable client found its slot taken")
            cursor[idx] += 1
        else:
            pend = group.pending(idx)
            group.daemon_step(idx, pend[int(rng.integers(len(pend)))])
        actions += 1
        if actions > max_actions:
            raise DeadlockError(f"schedule exceeded {max_actions} actions")
    peak = list(group.peak_staged)
    return ScheduleResult(group.finalize_minibatch(), actions, peak, gathers)


def run_threaded(group: OdcGroup, programs: Sequence[Sequence], timeout: float = 30.0,
                 client_pause: float = 0.0) -> ScheduleResult:
    """One thread per client and one accumulation daemon per server."""
    stop = threading.Event()
    failures: list[BaseException] = []
    counts = {"gathers": 0}
    lock = threading.Lock()

    def client(c, program):
        try:
            for kind, arg in _expand(group, c, program):
                if kind == "gather":
                    group.gather(c, arg)
                    with lock:
                        counts["gathers"] += 1
                else:
                    group.stage_blocking(arg, timeout=timeout)
                if client_pause:
                    time.sleep(client_pause)
        except BaseException as exc:  # surfaced after join
            failures.append(exc)

    def daemon(s):
        while not stop.is_set():
            if not group.daemon_step(s):
                time.sleep(0)

    daemons = [threading.Thread(target=daemon, args=(s,), daemon=True) for s in range(group.n)]
    clients = [threading.Thread(target=client, args=(c, p)) for c, p in enumerate(programs)]
    for t in daemons + clients:
        t.start()
    deadline = time.monotonic() + timeout
    for t in clients:
        t.join(max(0.0, deadline - time.monotonic()))
        if t.is_alive():
            stop.set()
            raise DeadlockError("client thread did not finish within timeout")
    stop.set()
    for t in daemons:
        t.join()
    if failures:
        raise failures[0]
    peak = list(group.peak_staged)
    return ScheduleResult(group.finalize_minibatch(), 0, peak, counts["gathers"])


def random_programs(rng: np.random.Generator, n_clients: int, layer: str, size: int, max_messages: int = 8,
                    integer: bool = True, gather_prob: float = 0.3) -> list[list]:
    """Random client programs of weighted gradient pushes mixed with gathers."""
    programs = []
    for _ in range(n_clients):
        prog = []
        for _ in range(int(rng.integers(0, max_messages + 1))):
            if rng.random() < gather_prob:
                prog.append(("gather", layer))
            if integer:
                grad = rng.integers(-1000, 1001, size=size)
                weight = int(rng.integers(0, 5))
            else:
                grad = rng.standard_normal(size)
                weight = float(rng.random())
            prog.append(("scatter", layer, grad, weight))
        programs.append(prog)
    return programs


def program_oracle(programs, size: int, dtype) -> np.ndarray:
    contributions = [(op[2], op[3]) for prog in programs for op in prog if op[0] == "scatter"]
    if not contributions:
        return np.zeros(size, dtype=dtype)
    return collective_reduce_reference(contributions, dtype=dtype)


def verify_equivalence(n_clients: int, schedules: int, seed: int, size: int = 37, max_messages: int = 8,
                       threaded: bool = False) -> dict:
    """Randomized equivalence suite: each schedule checked against the sequential oracle."""
    rng = np.random.default_rng(seed)
    passed = failed = 0
    failures = []
    for i in range(schedules):
        integer = i % 2 == 0
        dtype = np.int64 if integer else np.float64
        group = OdcGroup(n_clients, dtype=dtype)
        group.register_layer("layer0", rng.integers(-5, 6, size=size).astype(dtype))
        programs = random_programs(rng, n_clients, "layer0", size, max_messages, integer)
        if threaded:
            res = run_threaded(group, programs)
        else:
            res = run_schedule(group, programs, rng)
        got = np.concatenate(res.shards["layer0"])
        want = program_oracle(programs, size, dtype)
        if integer:
            ok = np.array_equal(got, want)
        else:
            ok = bool(np.all(np.abs(got - want) <= 1e-6 * np.maximum(np.abs(want), 1e-12)))
        ok = ok and max(res.peak_staged) <= group.buffer_bound()
        if ok:
            passed += 1
        else:
            failed += 1
            failures.append(i)
    return {"passed": passed, "failed": failed, "failures": failures}
