"""Checkpoint-wave coordination and the three migration strategies.

A wave sweeps a control event (PREPARE, COMMIT, ROLLBACK or INIT) over
every live task instance, either hop-by-hop along the dataflow edges
(SEQUENTIAL) or straight from the coordinator to each input queue
(BROADCAST).  Join instances align sequential barriers: they act only on
the last copy, after every upstream channel has delivered its barrier.

Strategies sequence waves differently:

* DSM rebalances immediately, relies on per-event acking plus periodic
  checkpoints to recover, and re-issues timed-out INIT waves whole.
* DCR pauses the source, drains via a sequential PREPARE (the barrier is
  the last event behind all in-flight data), commits, rebalances, then
  restores with an aggressively resent sequential INIT.
* CCR pauses the source, broadcasts PREPARE so each instance freezes its
  queue into a pending list, commits sequentially (persisting user state
  plus the captured events), rebalances, then broadcasts INIT so each
  instance restores and locally resumes its pending events.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import InvariantViolation, WaveConflictError
from .model import Schedule
from .reliability import CheckpointRecord
from .runtime import (
    COMMIT,
    DATA,
    INIT,
    KILLED,
    PREPARE,
    ROLLBACK,
    EventEnvelope,
    SimulationEngine,
    TaskInstanceRuntime,
    deserialize_pending,
    serialize_pending,
)

SEQUENTIAL = "SEQUENTIAL"
BROADCAST = "BROADCAST"

# Phase markers, in the order they may occur within one migration.
REQUEST = "REQUEST"
DRAIN_DONE = "DRAIN_DONE"
CAPTURE_DONE = "CAPTURE_DONE"
REBALANCE_START = "REBALANCE_START"
REBALANCE_DONE = "REBALANCE_DONE"
FIRST_INIT_ACKED = "FIRST_INIT_ACKED"
ALL_INIT_ACKED = "ALL_INIT_ACKED"
SOURCE_UNPAUSED = "SOURCE_UNPAUSED"

MARKER_ORDER = (
    REQUEST, DRAIN_DONE, CAPTURE_DONE, REBALANCE_START, REBALANCE_DONE,
    FIRST_INIT_ACKED, ALL_INIT_ACKED, SOURCE_UNPAUSED,
)


@dataclass
class WaveState:
    checkpointId: int
    kind: str
    routing: str
    rootId: int
    startedTs: int
    expected: frozenset
    ackedBy: set = field(default_factory=set)
    complete: bool = False
    superseded: bool = False
    drained: bool = False  # PREPARE must find no data behind it (DCR)


@dataclass(frozen=True)
class MigrationRequest:
    requestTs: int
    scheduleAfter: Schedule
    migratingInstances: frozenset
    strategy: str


class CheckpointCoordinator:
    """Wave machinery shared by all strategies; subclasses sequence phases."""

    strategy = "?"
    defers_stateful_acks = False

    def __init__(self, engine: SimulationEngine) -> None:
        self.engine = engine
        self.next_checkpoint_id = 1
        self.waves: dict[int, WaveState] = {}
        self.active: dict[str, WaveState] = {}
        self.markers: dict[str, int] = {}
        self.request: MigrationRequest | None = None
        self.migration_ckpt = 0
        self.migration_done = False
        self.aborted = False
        self._first_init_seen = False

    # -- lifecycle hooks ------------------------------------------------------

    def on_run_start(self) -> None:
        pass

    def on_migration_trigger(self) -> None:
        raise NotImplementedError

    def on_rebalance_done(self) -> None:
        raise NotImplementedError

    # -- helpers ----------------------------------------------------------------

    def mark(self, name: str) -> None:
        self.markers[name] = self.engine.now
        self.engine.record_phase(name)

    def _build_request(self) -> MigrationRequest:
        eng = self.engine
        return MigrationRequest(
            requestTs=eng.now,
            scheduleAfter=eng.config.scheduleAfter,
            migratingInstances=frozenset(eng.migrating),
            strategy=self.strategy,
        )

    def alive_ids(self) -> frozenset:
        return frozenset(
            inst.instanceId
            for inst in self.engine.instances.values()
            if inst.status != KILLED
        )

    # -- wave lifecycle -----------------------------------------------------------

    def start_wave(self, kind: str, routing: str, checkpoint_id: int,
                   supersede: bool = False, drained: bool = False) -> WaveState:
        active = self.active.get(kind)
        if active is not None and not active.complete and not active.superseded:
            if not supersede:
                raise WaveConflictError(f"a {kind} wave is already in flight")
            active.superseded = True
        eng = self.engine
        root = eng.new_id()
        eng.wave_acker.register_root(root, eng.now)
        wave = WaveState(
            checkpointId=checkpoint_id,
            kind=kind,
            routing=routing,
            rootId=root,
            startedTs=eng.now,
            expected=self.alive_ids(),
            drained=drained,
        )
        self.waves[root] = wave
        self.active[kind] = wave
        self.send_wave_copies(wave)
        # The root itself is never delivered anywhere: retire its own
        # anchor now that the first copies are in the tree, so the hash
        # reaches zero exactly when every copy has been acked.
        eng.wave_acker.ack_if_tracked(root, root)
        return wave

    def send_wave_copies(self, wave: WaveState, only: frozenset | None = None) -> None:
        eng = self.engine
        if wave.routing == BROADCAST:
            targets = [
                inst for inst in eng.instances.values()
                if inst.instanceId in wave.expected
                and (only is None or inst.instanceId in only)
            ]
        else:
            targets = eng.entry_instances()
        for inst in targets:
            self._send_copy(wave, inst)

    def _send_copy(self, wave: WaveState, inst: TaskInstanceRuntime) -> None:
        eng = self.engine
        copy_id = eng.new_id()
        eng.wave_acker.anchor_if_tracked(wave.rootId, copy_id)
        env = EventEnvelope(copy_id, wave.rootId, wave.checkpointId, wave.kind,
                            eng.epoch, False, eng.now)
        eng.deliver(env, inst)

    def _forward_wave(self, wave: WaveState, inst: TaskInstanceRuntime) -> None:
        if wave.complete or wave.superseded:
            return  # a nested handler may have finished the wave already
        eng = self.engine
        for edge in eng.dag.out_edges(inst.task.taskId):
            for child_id in eng.instances_of[edge.toTask]:
                self._send_copy(wave, eng.instances[child_id])

    def _ack_copy(self, wave: WaveState, inst: TaskInstanceRuntime,
                  env: EventEnvelope, counts: bool) -> None:
        self.engine.wave_acker.ack_if_tracked(wave.rootId, env.eventId)
        if not counts or wave.complete or wave.superseded:
            return
        wave.ackedBy.add(inst.instanceId)
        if wave.kind == INIT and not self._first_init_seen and self.request is not None:
            self._first_init_seen = True
            self.mark(FIRST_INIT_ACKED)
        if wave.expected <= wave.ackedBy:
            wave.complete = True
            if wave.kind in (PREPARE, COMMIT) and not self.engine.wave_acker.is_completed(wave.rootId):
                raise InvariantViolation(
                    f"{wave.kind} wave covered all instances but its causal "
                    f"tree hash is nonzero"
                )
            self.engine.wave_acker.discard(wave.rootId)
            self.on_wave_complete(wave)

    def on_wave_complete(self, wave: WaveState) -> None:
        raise NotImplementedError

    # -- control-event dispatch ------------------------------------------------------

    def on_control_event(self, inst: TaskInstanceRuntime, env: EventEnvelope) -> None:
        wave = self.waves.get(env.rootId)
        if wave is None or wave.superseded or wave.complete:
            # Stale or residual copy of a finished/abandoned wave.
            self.engine.wave_acker.ack_if_tracked(env.rootId, env.eventId)
            return
        if env.kind == PREPARE:
            self._handle_prepare(inst, env, wave)
        elif env.kind == COMMIT:
            self._handle_commit(inst, env, wave)
        elif env.kind == INIT:
            self._handle_init(inst, env, wave)
        elif env.kind == ROLLBACK:
            self._handle_rollback(inst, env, wave)
        else:
            raise InvariantViolation(f"unexpected control kind {env.kind}")

    def _aligned(self, inst: TaskInstanceRuntime, wave: WaveState) -> bool:
        """Count barrier copies; True once every upstream channel delivered."""
        if wave.routing == BROADCAST:
            return True
        seen = inst.barrier_counts.get(wave.rootId, 0) + 1
        expected = self.engine.upstream_instance_count(inst.task.taskId)
        if seen < expected:
            inst.barrier_counts[wave.rootId] = seen
            return False
        inst.barrier_counts.pop(wave.rootId, None)
        return True

    # -- PREPARE -----------------------------------------------------------------------

    def _handle_prepare(self, inst, env, wave) -> None:
        if not self._aligned(inst, wave):
            self._ack_copy(wave, inst, env, counts=False)
            return
        if wave.drained and any(e.kind == DATA for e in inst.queue):
            raise InvariantViolation(
                f"{inst.instanceId}: data events behind the final drain barrier"
            )
        # Assembling the snapshot runs through the task like one more
        # event: the barrier costs a service time at every hop.
        inst.in_service = env
        gen = inst.generation
        self.engine.clock.schedule_in(
            inst.task.serviceTimeMs, lambda: self._prepare_done(inst, env, wave, gen)
        )

    def _prepare_done(self, inst, env, wave, gen) -> None:
        if gen != inst.generation or inst.status == KILLED:
            return
        inst.in_service = None
        self.prepare_action(inst, wave)
        self._forward_wave(wave, inst)
        self._ack_copy(wave, inst, env, counts=True)
        self.engine._pump(inst)

    def prepare_action(self, inst: TaskInstanceRuntime, wave: WaveState) -> None:
        """Assemble the task snapshot (kept PREPARED until commit)."""
        snapshot = inst.state.snapshot() if inst.task.stateful else b""
        self.engine.store.prepare(
            CheckpointRecord(inst.instanceId, wave.checkpointId, snapshot)
        )

    # -- COMMIT -------------------------------------------------------------------------

    def _handle_commit(self, inst, env, wave) -> None:
        if not self._aligned(inst, wave):
            self._ack_copy(wave, inst, env, counts=False)
            return
        record = self.commit_record(inst, wave)
        latency = self.engine.store.write_latency_ms(record)
        inst.in_service = env  # persisting occupies the single service slot
        gen = inst.generation
        self.engine.clock.schedule_in(
            latency, lambda: self._commit_persisted(inst, env, wave, record, gen)
        )

    def _commit_persisted(self, inst, env, wave, record, gen) -> None:
        eng = self.engine
        if gen != inst.generation or inst.status == KILLED:
            return
        inst.in_service = None
        eng.store.commit(inst.instanceId, wave.checkpointId, write_ts=eng.now)
        self.commit_after_persist(inst, record)
        self._forward_wave(wave, inst)
        self._ack_copy(wave, inst, env, counts=True)
        eng._pump(inst)

    def commit_record(self, inst: TaskInstanceRuntime, wave: WaveState) -> CheckpointRecord:
        record = self.engine.store.get(inst.instanceId, wave.checkpointId)
        if record is None:
            # Surfaces as commit-without-prepare in the store.
            return CheckpointRecord(inst.instanceId, wave.checkpointId, b"")
        return record

    def commit_after_persist(self, inst: TaskInstanceRuntime,
                             record: CheckpointRecord) -> None:
        pass

    # -- INIT ------------------------------------------------------------------------------

    def _handle_init(self, inst, env, wave) -> None:
        if self.init_needs_restore(inst, wave):
            self.init_restore(inst, wave)
        if wave.routing == SEQUENTIAL:
            self._forward_wave(wave, inst)
        self._ack_copy(wave, inst, env, counts=True)

    def init_needs_restore(self, inst: TaskInstanceRuntime, wave: WaveState) -> bool:
        # A duplicate INIT at an already-restored task is skipped.
        return inst.last_restored_ckpt != wave.checkpointId

    def init_restore(self, inst: TaskInstanceRuntime, wave: WaveState) -> None:
        record = self.engine.store.get(inst.instanceId, wave.checkpointId)
        user_blob = record.userStateBlob if record is not None else None
        self.engine.initialize_instance(inst, wave.checkpointId, user_blob or None, None)

    # -- ROLLBACK ----------------------------------------------------------------------------

    def _handle_rollback(self, inst, env, wave) -> None:
        inst.captureFlag = False
        inst.prepared_snapshot = None
        if inst.pendingList:
            captured = inst.pendingList
            inst.pendingList = []
            inst.queue.extendleft(reversed(captured))
        self.engine.store.discard_prepared(inst.instanceId, wave.checkpointId)
        self._ack_copy(wave, inst, env, counts=True)
        self.engine._pump(inst)

    # -- rebalance ------------------------------------------------------------------------------

    def start_rebalance(self) -> None:
        eng = self.engine
        self.mark(REBALANCE_START)
        for inst_id in eng.migrating:
            eng.kill_instance(inst_id)
        eng.clock.schedule_in(eng._ms(eng.config.rebalanceDuration), self._rebalance_done)

    def _rebalance_done(self) -> None:
        eng = self.engine
        eng.rewire_channels()
        # Respawned workers come up after a modeled startup delay; until
        # then deliveries to them are dropped.
        for inst_id in eng.migrating:
            eng.mark_respawning(inst_id)
            delay = eng.rng.randint(
                eng.config.workerStartupMinMs, eng.config.workerStartupMaxMs
            )
            eng.clock.schedule_in(delay, lambda i=inst_id: eng.respawn_instance(i))
        self.mark(REBALANCE_DONE)
        self.on_rebalance_done()

    # -- shared failure path ------------------------------------------------------------------------

    def schedule_prepare_rollback_check(self, wave: WaveState) -> None:
        eng = self.engine
        eng.clock.schedule_in(eng.ack_timeout_ms, lambda: self._check_prepare(wave))

    def _check_prepare(self, wave: WaveState) -> None:
        if wave.complete or wave.superseded or self.aborted:
            return
        wave.superseded = True
        self.aborted = True
        self.migration_done = True
        self.start_wave(ROLLBACK, BROADCAST, wave.checkpointId)
        self.engine.unpause_source()


class DcrCoordinator(CheckpointCoordinator):
    """Drain the dataflow behind a sequential barrier, checkpoint, restore."""

    strategy = "DCR"

    def on_migration_trigger(self) -> None:
        eng = self.engine
        self.request = self._build_request()
        self.mark(REQUEST)
        eng.pause_source()
        self.migration_ckpt = self.next_checkpoint_id
        self.next_checkpoint_id += 1
        wave = self.start_wave(PREPARE, SEQUENTIAL, self.migration_ckpt, drained=True)
        self.schedule_prepare_rollback_check(wave)

    def on_wave_complete(self, wave: WaveState) -> None:
        if self.aborted:
            return
        if wave.kind == PREPARE:
            self.mark(DRAIN_DONE)
            self.start_wave(COMMIT, SEQUENTIAL, self.migration_ckpt)
        elif wave.kind == COMMIT:
            self.start_rebalance()
        elif wave.kind == INIT:
            self._finish_migration()

    def on_rebalance_done(self) -> None:
        self.start_wave(INIT, SEQUENTIAL, self.migration_ckpt)
        self._schedule_resend()

    def _schedule_resend(self) -> None:
        eng = self.engine
        eng.clock.schedule_in(eng._ms(eng.config.initResendInterval), self._resend_tick)

    def _resend_tick(self) -> None:
        wave = self.active.get(INIT)
        if wave is None or wave.complete or wave.superseded:
            return
        if self.engine.now >= self.engine.run_end_ms:
            return
        # Duplicate sequential INIT events re-enter at the dataflow head;
        # restored tasks skip and forward, so stragglers are reached.
        self.send_wave_copies(wave)
        self._schedule_resend()

    def _finish_migration(self) -> None:
        self.mark(ALL_INIT_ACKED)
        self.mark(SOURCE_UNPAUSED)
        self.migration_done = True
        self.engine.unpause_source()


class CcrCoordinator(DcrCoordinator):
    """Capture in-flight events per instance, checkpoint them, resume."""

    strategy = "CCR"

    def on_migration_trigger(self) -> None:
        eng = self.engine
        self.request = self._build_request()
        self.mark(REQUEST)
        eng.pause_source()
        self.migration_ckpt = self.next_checkpoint_id
        self.next_checkpoint_id += 1
        wave = self.start_wave(PREPARE, BROADCAST, self.migration_ckpt)
        self.schedule_prepare_rollback_check(wave)

    def _handle_prepare(self, inst, env, wave) -> None:
        # Broadcast barrier: assemble the snapshot (one service time), then
        # freeze the queue into the pending list; persisted at commit.
        inst.in_service = env
        gen = inst.generation
        self.engine.clock.schedule_in(
            inst.task.serviceTimeMs, lambda: self._capture_done(inst, env, wave, gen)
        )

    def _capture_done(self, inst, env, wave, gen) -> None:
        if gen != inst.generation or inst.status == KILLED:
            return
        inst.in_service = None
        inst.captureFlag = True
        inst.prepared_snapshot = inst.state.snapshot() if inst.task.stateful else b""
        self._ack_copy(wave, inst, env, counts=True)
        self.engine._pump(inst)

    def commit_record(self, inst, wave) -> CheckpointRecord:
        record = CheckpointRecord(
            inst.instanceId,
            wave.checkpointId,
            inst.prepared_snapshot if inst.prepared_snapshot is not None else b"",
            pendingEventsBlob=serialize_pending(inst.pendingList),
        )
        self.engine.store.prepare(record)
        return record

    def commit_after_persist(self, inst, record) -> None:
        (captured,) = struct.unpack_from("<I", record.pendingEventsBlob, 0)
        if len(inst.pendingList) != captured:
            raise InvariantViolation(
                f"{inst.instanceId}: events captured during the commit write"
            )
        inst.pendingList = []
        inst.prepared_snapshot = None

    def on_wave_complete(self, wave: WaveState) -> None:
        if self.aborted:
            return
        if wave.kind == PREPARE:
            self.mark(CAPTURE_DONE)
            self.start_wave(COMMIT, SEQUENTIAL, self.migration_ckpt)
        elif wave.kind == COMMIT:
            self.start_rebalance()
        elif wave.kind == INIT:
            self._finish_migration()

    def on_rebalance_done(self) -> None:
        self.start_wave(INIT, BROADCAST, self.migration_ckpt)
        self._schedule_resend()

    def _resend_tick(self) -> None:
        wave = self.active.get(INIT)
        if wave is None or wave.complete or wave.superseded:
            return
        if self.engine.now >= self.engine.run_end_ms:
            return
        missing = wave.expected - wave.ackedBy
        if missing:
            self.send_wave_copies(wave, only=frozenset(missing))
        self._schedule_resend()

    def init_restore(self, inst, wave) -> None:
        record = self.engine.store.get(inst.instanceId, wave.checkpointId)
        user_blob = record.userStateBlob if record is not None else None
        pending = None
        if record is not None and record.pendingEventsBlob is not None:
            pending = deserialize_pending(record.pendingEventsBlob)
        self.engine.initialize_instance(inst, wave.checkpointId, user_blob or None, pending)


class DsmCoordinator(CheckpointCoordinator):
    """Stock behavior: immediate rebalance, acking and periodic checkpoints."""

    strategy = "DSM"

    def __init__(self, engine: SimulationEngine) -> None:
        super().__init__(engine)
        self.migration_started = False
        self.last_committed_ckpt = 0

    @property
    def defers_stateful_acks(self) -> bool:
        # Checkpoint-gated acking ties replay to state rollback.  Once the
        # migration has restored every task there is no rollback point
        # left in the run, so holding acks would only manufacture replay
        # churn; gate them exactly while a rollback is still possible.
        return not self.migration_done

    def on_run_start(self) -> None:
        self._schedule_periodic()

    def _schedule_periodic(self) -> None:
        eng = self.engine
        eng.clock.schedule_in(eng._ms(eng.config.checkpointInterval), self._periodic_tick)

    def _periodic_tick(self) -> None:
        eng = self.engine
        if eng.now >= eng.run_end_ms:
            return
        migration_active = self.migration_started and not self.migration_done
        prepare_busy = any(
            w is not None and not w.complete and not w.superseded
            for w in (self.active.get(PREPARE), self.active.get(COMMIT))
        )
        if not migration_active and not prepare_busy:
            ckpt = self.next_checkpoint_id
            self.next_checkpoint_id += 1
            self.start_wave(PREPARE, SEQUENTIAL, ckpt)
        self._schedule_periodic()

    def on_migration_trigger(self) -> None:
        self.request = self._build_request()
        self.migration_started = True
        self.mark(REQUEST)
        # Abandon any checkpoint wave caught mid-flight by the kill.
        for kind in (PREPARE, COMMIT):
            wave = self.active.get(kind)
            if wave is not None and not wave.complete:
                wave.superseded = True
        self.start_rebalance()

    def on_rebalance_done(self) -> None:
        self._start_init_wave()

    def _start_init_wave(self) -> None:
        wave = self.start_wave(INIT, SEQUENTIAL, self.last_committed_ckpt, supersede=True)
        eng = self.engine
        eng.clock.schedule_in(eng.ack_timeout_ms, lambda: self._check_init(wave))

    def _check_init(self, wave: WaveState) -> None:
        # Un-acked INIT within the ack timeout: re-issue the whole wave.
        if wave.complete or wave.superseded:
            return
        if self.engine.now >= self.engine.run_end_ms:
            return
        self._start_init_wave()

    def init_needs_restore(self, inst, wave) -> bool:
        # Live tasks kept their state through the rebalance; only respawned
        # (uninitialized) tasks roll back to the last periodic checkpoint.
        return not inst.initialized

    def init_restore(self, inst, wave) -> None:
        record = self.engine.store.get_latest_committed(inst.instanceId)
        if record is None:
            self.engine.initialize_instance(inst, 0, None, None)
        else:
            self.engine.initialize_instance(
                inst, record.checkpointId, record.userStateBlob or None, None
            )

    def commit_after_persist(self, inst, record) -> None:
        # Input events processed since the previous checkpoint are acked
        # only now, so a rollback to this checkpoint replays exactly the
        # uncovered window.
        self.engine.flush_deferred_acks(inst)

    def on_wave_complete(self, wave: WaveState) -> None:
        if wave.kind == PREPARE:
            self.start_wave(COMMIT, SEQUENTIAL, wave.checkpointId)
        elif wave.kind == COMMIT:
            self.last_committed_ckpt = wave.checkpointId
        elif wave.kind == INIT:
            self.mark(ALL_INIT_ACKED)
            self.migration_done = True
            for inst in self.engine.instances.values():
                if inst.deferred_acks:
                    self.engine.flush_deferred_acks(inst)


_COORDINATORS = {
    "DSM": DsmCoordinator,
    "DCR": DcrCoordinator,
    "CCR": CcrCoordinator,
}


def make_coordinator(engine: SimulationEngine) -> CheckpointCoordinator:
    return _COORDINATORS[engine.config.strategy](engine)
