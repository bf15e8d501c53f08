"""Deterministic discrete-event engine for a miniature streaming dataflow.

One virtual clock owns every runtime object; actions fire in (time, seq)
order, so two runs with the same scenario and seed produce bit-identical
timelines.  Task instances consume single-threaded FIFO input queues with
at most one event in service; the paced source supports pause/buffer/burst
and pending-cap throttling; kill and respawn model the rebalance.
"""

from __future__ import annotations

import math
import random
import struct
import tempfile
import time as _wallclock
from collections import deque

from . import _kernels
from .errors import ConfigError, FlowMigrateError, InvariantViolation
from .metrics import Timeline
from .model import (
    DUPLICATE,
    SHUFFLE,
    ScenarioConfig,
    instance_id as make_instance_id,
    migrating_instances,
)
from .reliability import AckerService, StateStore

DATA = "DATA"
PREPARE = "PREPARE"
COMMIT = "COMMIT"
ROLLBACK = "ROLLBACK"
INIT = "INIT"

RUNNING = "RUNNING"
KILLED = "KILLED"
RESPAWNING = "RESPAWNING"
READY = "READY"

_MAX_ACTIONS = 200_000_000  # hard stop against runaway schedules
_TRANSPORT_RETRY_MS = 500  # reconnect cadence toward a starting worker

_PENDING_STRUCT = struct.Struct("<QQqqBBB")


class EventEnvelope:
    """A data or control event; control events carry the wave id in
    ``rootSeqNo`` and the wave's acker root in ``rootId``."""

    __slots__ = ("eventId", "rootId", "rootSeqNo", "kind", "epoch", "replayed", "emitTs")

    def __init__(self, eventId: int, rootId: int, rootSeqNo: int, kind: str,
                 epoch: int, replayed: bool, emitTs: int) -> None:
        self.eventId = eventId
        self.rootId = rootId
        self.rootSeqNo = rootSeqNo
        self.kind = kind
        self.epoch = epoch
        self.replayed = replayed
        self.emitTs = emitTs

    def __repr__(self) -> str:  # debugging aid only
        return (f"<{self.kind} id={self.eventId:#x} root={self.rootId:#x} "
                f"seq={self.rootSeqNo} e{self.epoch}{' R' if self.replayed else ''}>")


def serialize_pending(events: list[EventEnvelope]) -> bytes:
    parts = [struct.pack("<I", len(events))]
    for e in events:
        parts.append(_PENDING_STRUCT.pack(
            e.eventId, e.rootId, e.rootSeqNo, e.emitTs,
            1 if e.replayed else 0, e.epoch, 0,
        ))
    return b"".join(parts)


def deserialize_pending(blob: bytes) -> list[EventEnvelope]:
    (count,) = struct.unpack_from("<I", blob, 0)
    events = []
    offset = 4
    for _ in range(count):
        eid, root, seq, emit_ts, replayed, epoch, _pad = _PENDING_STRUCT.unpack_from(blob, offset)
        offset += _PENDING_STRUCT.size
        events.append(EventEnvelope(eid, root, seq, DATA, epoch, bool(replayed), emit_ts))
    return events


class DemoUserTask:
    """Reference stateful task logic: counts events it has processed."""

    __slots__ = ("processedCount", "lastSeqNo")

    def __init__(self, processed: int = 0, last_seq: int = -1) -> None:
        self.processedCount = processed
        self.lastSeqNo = last_seq

    def on_event(self, env: EventEnvelope) -> None:
        self.processedCount += 1
        self.lastSeqNo = env.rootSeqNo

    def snapshot(self) -> bytes:
        return struct.pack("<qq", self.processedCount, self.lastSeqNo)

    @classmethod
    def restore(cls, blob: bytes) -> "DemoUserTask":
        processed, last_seq = struct.unpack("<qq", blob)
        return cls(processed, last_seq)


class TaskInstanceRuntime:
    """One parallel executor of a task: FIFO queue, single service slot."""

    __slots__ = (
        "instanceId", "task", "is_sink", "status", "initialized", "captureFlag",
        "queue", "pendingList", "preInit", "in_service", "generation", "state",
        "rr_edges", "rr_targets", "barrier_counts", "deferred_acks",
        "last_restored_ckpt", "prepared_snapshot",
    )

    def __init__(self, inst_id: str, task, is_sink: bool) -> None:
        self.instanceId = inst_id
        self.task = task
        self.is_sink = is_sink
        self.status = RUNNING
        self.initialized = True
        self.captureFlag = False
        self.queue: deque[EventEnvelope] = deque()
        self.pendingList: list[EventEnvelope] = []
        self.preInit: list[EventEnvelope] = []
        self.in_service: EventEnvelope | None = None
        self.generation = 0
        self.state = DemoUserTask()
        self.rr_edges = 0
        self.rr_targets: dict[int, int] = {}
        self.barrier_counts: dict[int, int] = {}
        self.deferred_acks: list[tuple[int, int]] = []
        self.last_restored_ckpt = -1
        self.prepared_snapshot: bytes | None = None

    def alive(self) -> bool:
        return self.status in (RUNNING, READY)

    def reset_routing(self) -> None:
        self.rr_edges = 0
        self.rr_targets.clear()


class SourceRuntime:
    """Paced root-event emitter with pause/backlog/burst semantics."""

    __slots__ = ("paused", "backlog", "root_cache", "next_seq", "next_tick",
                 "unacked", "rr_edges", "rr_targets")

    def __init__(self) -> None:
        self.paused = False
        self.backlog = 0
        self.root_cache: dict[int, EventEnvelope] = {}
        self.next_seq = 0   # root sequence numbers, advanced per emission
        self.next_tick = 0  # pacing ticks, advanced per period
        self.unacked = 0
        self.rr_edges = 0
        self.rr_targets: dict[int, int] = {}


class SimClock:
    """Virtual clock over the kernel calendar; ms resolution."""

    __slots__ = ("now", "_calendar")

    def __init__(self, calendar) -> None:
        self.now = 0
        self._calendar = calendar

    def schedule_at(self, fire_ms: int, action) -> None:
        if fire_ms < self.now:
            raise InvariantViolation(f"scheduling into the past: {fire_ms} < {self.now}")
        self._calendar.push(fire_ms, action)

    def schedule_in(self, delay_ms: int, action) -> None:
        self.schedule_at(self.now + delay_ms, action)


class SimulationEngine:
    """Owns all runtime state for one scenario run."""

    def __init__(self, config: ScenarioConfig, kernel_backend: str | None = None,
                 store: StateStore | None = None, migrate: bool = True) -> None:
        if len(config.dag.sourceTasks) != 1:
            raise ConfigError("the engine supports exactly one source task")
        self.migrate = migrate
        backend = _kernels.get_backend(kernel_backend)
        self.config = config
        self.dag = config.dag
        self.clock = SimClock(backend.EventCalendar())
        self.rng = random.Random(config.randomSeed)
        self.timeline = Timeline()
        self.run_end_ms = self._ms(config.runDuration)
        self.ack_timeout_ms = self._ms(config.ackTimeout)
        self.net_delay_ms = config.networkDelayMs
        self.acking_data = config.data_acking_enabled()
        self.acker = AckerService(self.ack_timeout_ms, backend.AckerTable())
        self.wave_acker = AckerService(self.ack_timeout_ms, backend.AckerTable())
        if store is not None:
            self.store = store
        elif config.storeBackend == "file":
            directory = tempfile.mkdtemp(prefix="flowmigrate-ckpt-")
            self.store = StateStore("file", directory)
        else:
            self.store = StateStore("memory")
        self.store.latency.write_base_ms = config.storeWriteBaseMs
        self.store.latency.write_per_byte_ms = config.storeWritePerByteMs

        self.epoch = 0
        self.migration_requested = False
        self.source = SourceRuntime()
        self.source_task_id = self.dag.sourceTasks[0]
        self.sink_task_ids = set(self.dag.sinkTasks)

        self.instances: dict[str, TaskInstanceRuntime] = {}
        self.instances_of: dict[str, list[str]] = {}
        for tid in self.dag.topological_order():
            if tid == self.source_task_id:
                continue
            task = self.dag.task(tid)
            ids = []
            for i in range(task.instanceCount):
                iid = make_instance_id(tid, i)
                self.instances[iid] = TaskInstanceRuntime(iid, task, tid in self.sink_task_ids)
                ids.append(iid)
            self.instances_of[tid] = ids

        self.migrating = sorted(migrating_instances(config.scheduleBefore, config.scheduleAfter))
        self._edge_index = {id(e): i for i, e in enumerate(self.dag.edges)}
        self._actions = 0
        self._emit_rate = config.sourceRate
        self._cap = config.maxPendingRoots
        # Observability for state-correctness checks: processed counts at
        # kill time and the counts instances come back with at restore.
        self.kill_snapshots: dict[str, int] = {}
        self.restore_snapshots: dict[str, int] = {}

        from .protocol import make_coordinator  # deferred: protocol imports runtime

        self.coordinator = make_coordinator(self)

    # -- time helpers --------------------------------------------------------

    @staticmethod
    def _ms(seconds: float) -> int:
        return int(round(seconds * 1000))

    @property
    def now(self) -> int:
        return self.clock.now

    def new_id(self) -> int:
        return self.rng.getrandbits(64) or 1

    def record_phase(self, name: str) -> None:
        self.timeline.record_phase(self.now, name)

    # -- main loop -----------------------------------------------------------

    def run(self, realtime_scale: float = 0.0) -> Timeline:
        self._schedule_emission(self.source.next_tick)
        if self.acking_data:
            self._schedule_sweep(self.ack_timeout_ms // 2)
        if self.migrate:
            self.clock.schedule_at(self._ms(self.config.migrationTriggerAt),
                                   self._trigger_migration)
        self.coordinator.on_run_start()

        calendar = self.clock._calendar
        while len(calendar):
            fire_ms, _seq, action = calendar.pop()
            if realtime_scale > 0 and fire_ms > self.clock.now:
                _wallclock.sleep((fire_ms - self.clock.now) * realtime_scale / 1000.0)
            self.clock.now = fire_ms
            action()
            self._actions += 1
            if self._actions > _MAX_ACTIONS:
                raise InvariantViolation("action budget exceeded; runaway schedule")
        return self.timeline

    def _trigger_migration(self) -> None:
        self.migration_requested = True
        self.epoch = 1
        self.coordinator.on_migration_trigger()

    # -- source --------------------------------------------------------------

    def _emission_time(self, tick: int) -> int:
        return int(math.floor(tick * 1000.0 / self._emit_rate + 1e-9))

    def _schedule_emission(self, tick: int) -> None:
        t = self._emission_time(tick)
        if t < self.run_end_ms:
            self.clock.schedule_at(t, self._source_tick)

    def _source_tick(self) -> None:
        src = self.source
        if src.paused or (self.acking_data and src.unacked >= self._cap):
            # Paused, or the pending cap is reached: defer this emission.
            src.backlog += 1
        else:
            self._emit_root()
        src.next_tick += 1
        self._schedule_emission(src.next_tick)

    def _emit_root(self) -> None:
        src = self.source
        root_id = self.new_id()
        env = EventEnvelope(root_id, root_id, src.next_seq, DATA, self.epoch, False, self.now)
        src.next_seq += 1
        if self.acking_data:
            self.acker.register_root(root_id, self.now)
            src.root_cache[root_id] = env
            src.unacked += 1
        self.timeline.record_emit(self.now, root_id, env.rootSeqNo, env.epoch)
        self._route_emission(src, self.source_task_id, env)

    def pause_source(self) -> None:
        self.source.paused = True

    def unpause_source(self) -> None:
        """Resume emission, draining the whole backlog as an immediate burst."""
        src = self.source
        src.paused = False
        burst = src.backlog
        src.backlog = 0
        for _ in range(burst):
            self._emit_root()

    def _on_root_completed(self, root_id: int) -> None:
        src = self.source
        if src.root_cache.pop(root_id, None) is not None:
            src.unacked -= 1
            self.acker.discard(root_id)
            # A pending slot freed: release one cap-deferred emission.
            if src.backlog and not src.paused and src.unacked < self._cap:
                src.backlog -= 1
                self._emit_root()

    # -- ack sweeps ----------------------------------------------------------

    def _schedule_sweep(self, at_ms: int) -> None:
        if at_ms < self.run_end_ms:
            self.clock.schedule_at(at_ms, self._sweep_tick)

    def _sweep_tick(self) -> None:
        for root_id in self.acker.sweep_timeouts(self.now):
            env = self.source.root_cache.get(root_id)
            if env is not None:
                self._replay_root(env)
        self._schedule_sweep(self.now + self.ack_timeout_ms)

    def _replay_root(self, original: EventEnvelope) -> None:
        env = EventEnvelope(original.rootId, original.rootId, original.rootSeqNo,
                            DATA, original.epoch, True, self.now)
        self.timeline.record_replay(self.now, env.rootId, env.rootSeqNo, env.epoch)
        self._route_emission(self.source, self.source_task_id, env)

    # -- routing and delivery -------------------------------------------------

    def _pick_instance(self, sender, edge, edge_idx: int) -> TaskInstanceRuntime:
        targets = self.instances_of[edge.toTask]
        counter = sender.rr_targets.get(edge_idx, 0)
        sender.rr_targets[edge_idx] = counter + 1
        return self.instances[targets[counter % len(targets)]]

    def _route_emission(self, sender, task_id: str, env: EventEnvelope) -> None:
        """Send one produced event along the task's out-edges.

        DUPLICATE edges each carry a copy; SHUFFLE edges share the stream
        round-robin.  A single target receives the event itself; with
        several targets each copy gets a fresh anchored id and the
        never-delivered original is retired, keeping the XOR tree balanced.
        """
        out = self.dag.out_edges(task_id)
        if not out:
            return
        chosen: list = []
        shuffle_edges = [e for e in out if e.grouping == SHUFFLE]
        for e in out:
            if e.grouping == DUPLICATE:
                chosen.append(e)
        if shuffle_edges:
            idx = sender.rr_edges % len(shuffle_edges)
            sender.rr_edges += 1
            chosen.append(shuffle_edges[idx])

        if len(chosen) == 1:
            e = chosen[0]
            target = self._pick_instance(sender, e, self._edge_index[id(e)])
            self.deliver(env, target)
            return
        for e in chosen:
            target = self._pick_instance(sender, e, self._edge_index[id(e)])
            copy = EventEnvelope(self.new_id(), env.rootId, env.rootSeqNo, env.kind,
                                 env.epoch, env.replayed, self.now)
            if self.acking_data:
                self.acker.anchor_if_tracked(env.rootId, copy.eventId)
            self.deliver(copy, target)
        if self.acking_data and self.acker.ack_if_tracked(env.rootId, env.eventId):
            self._on_root_completed(env.rootId)

    def deliver(self, env: EventEnvelope, target: TaskInstanceRuntime) -> None:
        self.clock.schedule_in(self.net_delay_ms, lambda: self._arrive(env, target))

    def _arrive(self, env: EventEnvelope, target: TaskInstanceRuntime) -> None:
        if target.status == KILLED:
            return  # dropped; a lost DATA event is recovered via ack timeout
        if target.status == RESPAWNING:
            # The worker process is starting: the transport holds data and
            # reconnects, while control copies are dropped (wave resends
            # own their recovery).
            if env.kind == DATA:
                self.clock.schedule_in(_TRANSPORT_RETRY_MS,
                                       lambda: self._arrive(env, target))
            return
        target.queue.append(env)
        self._pump(target)

    # -- instance processing ---------------------------------------------------

    def _pump(self, inst: TaskInstanceRuntime) -> None:
        while inst.in_service is None and inst.alive() and inst.queue:
            env = inst.queue.popleft()
            if env.kind != DATA:
                self.coordinator.on_control_event(inst, env)
                continue
            if inst.captureFlag:
                inst.pendingList.append(env)
                continue
            if not inst.initialized:
                inst.preInit.append(env)
                continue
            inst.in_service = env
            gen = inst.generation
            self.clock.schedule_in(
                inst.task.serviceTimeMs,
                lambda i=inst, e=env, g=gen: self._complete_service(i, e, g),
            )

    def _complete_service(self, inst: TaskInstanceRuntime, env: EventEnvelope,
                          gen: int) -> None:
        if gen != inst.generation or inst.status == KILLED:
            return  # instance was killed while this event was in service
        if inst.in_service is not env:
            raise InvariantViolation(f"{inst.instanceId}: service slot corrupted")
        inst.in_service = None
        inst.state.on_event(env)

        if inst.is_sink:
            self.timeline.record_sink_exit(self.now, env.eventId, env.rootSeqNo,
                                           env.epoch, env.replayed)
        else:
            self._emit_children(inst, env)

        if self.acking_data:
            if inst.task.stateful and self.coordinator.defers_stateful_acks:
                # Held until this instance's next checkpoint commit, so a
                # post-restore replay re-covers the rolled-back window.
                inst.deferred_acks.append((env.rootId, env.eventId))
            elif self.acker.ack_if_tracked(env.rootId, env.eventId):
                self._on_root_completed(env.rootId)
        self._pump(inst)

    def flush_deferred_acks(self, inst: TaskInstanceRuntime) -> None:
        acks, inst.deferred_acks = inst.deferred_acks, []
        for root_id, event_id in acks:
            if self.acker.ack_if_tracked(root_id, event_id):
                self._on_root_completed(root_id)

    def _emit_children(self, inst: TaskInstanceRuntime, env: EventEnvelope) -> None:
        sel = inst.task.selectivity
        count = int(sel)
        frac = sel - count
        if frac > 0 and self.rng.random() < frac:
            count += 1
        for _ in range(count):
            child = EventEnvelope(self.new_id(), env.rootId, env.rootSeqNo, DATA,
                                  env.epoch, env.replayed, self.now)
            if self.acking_data:
                self.acker.anchor_if_tracked(env.rootId, child.eventId)
            self._route_emission(inst, inst.task.taskId, child)

    # -- kill / respawn ---------------------------------------------------------

    def kill_instance(self, inst_id: str) -> None:
        inst = self.instances[inst_id]
        if inst.status == KILLED:
            raise FlowMigrateError(f"{inst_id} is already killed")
        self.kill_snapshots[inst_id] = inst.state.processedCount
        inst.status = KILLED
        inst.generation += 1
        inst.queue.clear()
        inst.preInit.clear()
        inst.pendingList.clear()
        inst.deferred_acks.clear()
        inst.barrier_counts.clear()
        inst.in_service = None

    def mark_respawning(self, inst_id: str) -> None:
        self.instances[inst_id].status = RESPAWNING

    def respawn_instance(self, inst_id: str) -> None:
        inst = self.instances[inst_id]
        if inst.status not in (KILLED, RESPAWNING):
            raise FlowMigrateError(f"{inst_id} is not awaiting respawn")
        inst.status = READY
        inst.initialized = False
        inst.captureFlag = False
        inst.generation += 1
        inst.queue.clear()
        inst.preInit.clear()
        inst.pendingList.clear()
        inst.deferred_acks.clear()
        inst.barrier_counts.clear()
        inst.in_service = None
        inst.state = DemoUserTask()
        inst.prepared_snapshot = None
        inst.reset_routing()

    def rewire_channels(self) -> None:
        """Reset routing counters after a rebalance rewires the dataflow."""
        self.source.rr_edges = 0
        self.source.rr_targets.clear()
        for inst in self.instances.values():
            inst.reset_routing()

    def initialize_instance(self, inst: TaskInstanceRuntime, checkpoint_id: int,
                            user_blob: bytes | None,
                            pending: list[EventEnvelope] | None) -> None:
        """Restore state and resume processing (INIT handling)."""
        if user_blob:
            inst.state = DemoUserTask.restore(user_blob)
        if inst.instanceId not in self.restore_snapshots:
            self.restore_snapshots[inst.instanceId] = inst.state.processedCount
        inst.captureFlag = False
        inst.initialized = True
        if inst.status == READY:
            inst.status = RUNNING
        inst.last_restored_ckpt = checkpoint_id
        resumed = list(pending or [])
        if inst.pendingList:
            raise InvariantViolation(
                f"{inst.instanceId}: locally captured events present at restore"
            )
        if resumed or inst.preInit:
            inst.queue = deque(resumed + inst.preInit + list(inst.queue))
            inst.preInit = []
        self._pump(inst)

    # -- views -------------------------------------------------------------------

    def alive_instances(self) -> list[TaskInstanceRuntime]:
        return [inst for inst in self.instances.values() if inst.alive()]

    def entry_instances(self) -> list[TaskInstanceRuntime]:
        """Instances of the tasks fed directly by the source."""
        out = []
        for e in self.dag.out_edges(self.source_task_id):
            for iid in self.instances_of[e.toTask]:
                out.append(self.instances[iid])
        return out

    def upstream_instance_count(self, task_id: str) -> int:
        """Barrier copies a task instance expects per sequential wave.

        One per upstream task instance, plus one injected by the wave
        coordinator when the task is fed directly by the source.
        """
        total = 0
        fed_by_source = False
        for e in self.dag.in_edges(task_id):
            if e.fromTask == self.source_task_id:
                fed_by_source = True
            else:
                total += self.dag.task(e.fromTask).instanceCount
        if fed_by_source or total == 0:
            total += 1
        return total

    def stateful_count_total(self) -> int:
        """Sum of processed counts over stateful task instances."""
        return sum(
            inst.state.processedCount
            for inst in self.instances.values()
            if inst.task.stateful
        )


def run_scenario(config: ScenarioConfig, kernel_backend: str | None = None,
                 realtime_scale: float = 0.0, store: StateStore | None = None,
                 migrate: bool = True) -> tuple[Timeline, SimulationEngine]:
    """Run one scenario to completion; returns the timeline and the engine."""
    engine = SimulationEngine(config, kernel_backend=kernel_backend, store=store,
                              migrate=migrate)
    timeline = engine.run(realtime_scale=realtime_scale)
    return timeline, engine
