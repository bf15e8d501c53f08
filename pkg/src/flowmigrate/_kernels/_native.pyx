# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled twin of the pure-Python kernels (see pure.py for the contract).

The calendar is a binary heap over parallel C arrays keyed by
(fire_time, sequence); payloads live in a Python list and are never
compared.  The acker table is a C++ hash map from root id to its XOR
accumulator, with a side vector preserving registration order so sweeps
match the pure backend exactly.  Root ids must not be re-registered after
a discard (the engine never does; fresh ids are drawn per root).
"""

from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport free, malloc, realloc
from libcpp.unordered_map cimport unordered_map
from libcpp.vector cimport vector

BACKEND_NAME = "native"

ACK_OK = 0
ACK_COMPLETED = 1
ACK_UNKNOWN = 2
ACK_ALREADY_DONE = 3

cdef Py_ssize_t _INITIAL_CAPACITY = 4096


cdef class EventCalendar:
    cdef int64_t* _times
    cdef int64_t* _seqs
    cdef list _payloads
    cdef Py_ssize_t _size
    cdef Py_ssize_t _capacity
    cdef int64_t _next_seq

    def __cinit__(self):
        self._capacity = _INITIAL_CAPACITY
        self._times = <int64_t*> malloc(self._capacity * sizeof(int64_t))
        self._seqs = <int64_t*> malloc(self._capacity * sizeof(int64_t))
        if self._times == NULL or self._seqs == NULL:
            raise MemoryError()
        self._payloads = [None] * self._capacity
        self._size = 0
        self._next_seq = 0

    def __dealloc__(self):
        if self._times != NULL:
            free(self._times)
        if self._seqs != NULL:
            free(self._seqs)

    def __len__(self):
        return self._size

    cdef int _grow(self) except -1:
        cdef Py_ssize_t new_cap = self._capacity * 2
        self._times = <int64_t*> realloc(self._times, new_cap * sizeof(int64_t))
        self._seqs = <int64_t*> realloc(self._seqs, new_cap * sizeof(int64_t))
        if self._times == NULL or self._seqs == NULL:
            raise MemoryError()
        self._payloads.extend([None] * (new_cap - self._capacity))
        self._capacity = new_cap
        return 0

    cdef inline bint _less(self, Py_ssize_t a, Py_ssize_t b):
        if self._times[a] != self._times[b]:
            return self._times[a] < self._times[b]
        return self._seqs[a] < self._seqs[b]

    cdef void _swap(self, Py_ssize_t a, Py_ssize_t b):
        cdef int64_t tmp_t = self._times[a]
        cdef int64_t tmp_s = self._seqs[a]
        self._times[a] = self._times[b]
        self._seqs[a] = self._seqs[b]
        self._times[b] = tmp_t
        self._seqs[b] = tmp_s
        tmp_p = self._payloads[a]
        self._payloads[a] = self._payloads[b]
        self._payloads[b] = tmp_p

    def push(self, fire_ms, payload):
        cdef Py_ssize_t i, parent
        cdef int64_t seq
        if self._size == self._capacity:
            self._grow()
        i = self._size
        self._times[i] = fire_ms
        self._seqs[i] = self._next_seq
        self._payloads[i] = payload
        self._size += 1
        seq = self._next_seq
        self._next_seq += 1
        while i > 0:
            parent = (i - 1) >> 1
            if self._less(i, parent):
                self._swap(i, parent)
                i = parent
            else:
                break
        return seq

    def pop(self):
        cdef Py_ssize_t i, left, right, smallest
        if self._size == 0:
            raise IndexError("pop from empty calendar")
        out = (self._times[0], self._seqs[0], self._payloads[0])
        self._size -= 1
        if self._size > 0:
            self._times[0] = self._times[self._size]
            self._seqs[0] = self._seqs[self._size]
            self._payloads[0] = self._payloads[self._size]
        self._payloads[self._size] = None
        i = 0
        while True:
            left = 2 * i + 1
            right = left + 1
            smallest = i
            if left < self._size and self._less(left, smallest):
                smallest = left
            if right < self._size and self._less(right, smallest):
                smallest = right
            if smallest == i:
                break
            self._swap(i, smallest)
            i = smallest
        return out

    def peek_time(self):
        if self._size == 0:
            return -1
        return self._times[0]


cdef struct AckEntry:
    uint64_t xor_hash
    int64_t register_ts
    bint completed


cdef class AckerTable:
    cdef unordered_map[uint64_t, AckEntry] _entries
    cdef vector[uint64_t] _order

    def __len__(self):
        return self._entries.size()

    def register(self, root_id, ts_ms):
        cdef uint64_t root = <uint64_t> root_id
        cdef AckEntry entry
        if self._entries.count(root):
            return False
        entry.xor_hash = root
        entry.register_ts = <int64_t> ts_ms
        entry.completed = False
        self._entries[root] = entry
        self._order.push_back(root)
        return True

    def reset(self, root_id, ts_ms):
        cdef uint64_t root = <uint64_t> root_id
        if not self._entries.count(root):
            return False
        self._entries[root].xor_hash = root
        self._entries[root].register_ts = <int64_t> ts_ms
        self._entries[root].completed = False
        return True

    def anchor(self, root_id, event_id):
        cdef uint64_t root = <uint64_t> root_id
        if not self._entries.count(root):
            return ACK_UNKNOWN
        if self._entries[root].completed:
            return ACK_ALREADY_DONE
        self._entries[root].xor_hash = self._entries[root].xor_hash ^ (<uint64_t> event_id)
        return ACK_OK

    def ack(self, root_id, event_id):
        cdef uint64_t root = <uint64_t> root_id
        if not self._entries.count(root):
            return ACK_UNKNOWN
        if self._entries[root].completed:
            return ACK_ALREADY_DONE
        self._entries[root].xor_hash = self._entries[root].xor_hash ^ (<uint64_t> event_id)
        if self._entries[root].xor_hash == 0:
            self._entries[root].completed = True
            return ACK_COMPLETED
        return ACK_OK

    def is_completed(self, root_id):
        cdef uint64_t root = <uint64_t> root_id
        if not self._entries.count(root):
            return False
        return self._entries[root].completed

    def contains(self, root_id):
        return self._entries.count(<uint64_t> root_id) > 0

    def hash_of(self, root_id):
        cdef uint64_t root = <uint64_t> root_id
        if not self._entries.count(root):
            raise KeyError(root_id)
        return self._entries[root].xor_hash

    def discard(self, root_id):
        self._entries.erase(<uint64_t> root_id)

    def pending_count(self):
        cdef Py_ssize_t n = 0
        cdef size_t i
        cdef uint64_t root
        for i in range(self._order.size()):
            root = self._order[i]
            if self._entries.count(root) and not self._entries[root].completed:
                n += 1
        return n

    def sweep(self, now_ms, timeout_ms):
        cdef int64_t now = <int64_t> now_ms
        cdef int64_t timeout = <int64_t> timeout_ms
        cdef size_t i
        cdef size_t kept = 0
        cdef uint64_t root
        expired = []
        # Compact the order vector, dropping discarded roots as we pass.
        for i in range(self._order.size()):
            root = self._order[i]
            if not self._entries.count(root):
                continue
            self._order[kept] = root
            kept += 1
            if (not self._entries[root].completed
                    and now - self._entries[root].register_ts >= timeout):
                expired.append(root)
        self._order.resize(kept)
        for root_obj in expired:
            root = <uint64_t> root_obj
            self._entries[root].xor_hash = root
            self._entries[root].register_ts = now
            self._entries[root].completed = False
        return expired
