# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: atomics, the bounded non-blocking reorderer and the
hybrid-queue consume loop.

Every class here has a pure-Python twin in ``_fallback`` with the same
surface; ``streamorder._backend`` picks one at import.
"""

from cpython.ref cimport PyObject, Py_INCREF, Py_DECREF, Py_XDECREF
from libc.stdlib cimport calloc, free
from libc.stdint cimport int64_t

cdef extern from *:
    """
    #include <stdint.h>
    static inline int64_t so_load(int64_t *p) { return __atomic_load_n(p, __ATOMIC_SEQ_CST); }
    static inline void so_store(int64_t *p, int64_t v) { __atomic_store_n(p, v, __ATOMIC_SEQ_CST); }
    static inline int64_t so_fetch_add(int64_t *p, int64_t v) { return __atomic_fetch_add(p, v, __ATOMIC_SEQ_CST); }
    static inline int64_t so_fetch_sub(int64_t *p, int64_t v) { return __atomic_fetch_sub(p, v, __ATOMIC_SEQ_CST); }
    static inline int so_test_and_set(char *f) { return __atomic_test_and_set(f, __ATOMIC_SEQ_CST); }
    static inline void so_clear(char *f) { __atomic_clear(f, __ATOMIC_SEQ_CST); }
    static inline PyObject *so_load_ptr(PyObject **p) { return __atomic_load_n(p, __ATOMIC_SEQ_CST); }
    static inline PyObject *so_exchange_ptr(PyObject **p, PyObject *v) { return __atomic_exchange_n(p, v, __ATOMIC_SEQ_CST); }
    """
    int64_t so_load(int64_t *p) nogil
    void so_store(int64_t *p, int64_t v) nogil
    int64_t so_fetch_add(int64_t *p, int64_t v) nogil
    int64_t so_fetch_sub(int64_t *p, int64_t v) nogil
    int so_test_and_set(char *f) nogil
    void so_clear(char *f) nogil
    PyObject *so_load_ptr(PyObject **p) nogil
    PyObject *so_exchange_ptr(PyObject **p, PyObject *v) nogil


BACKEND_NAME = "compiled"


cdef class AtomicCounter:
    """64-bit atomic integer. ``fetch_add`` returns the value before the add."""

    cdef int64_t _value

    def __cinit__(self, int64_t initial=0):
        self._value = initial

    cpdef int64_t fetch_add(self, int64_t delta=1):
        return so_fetch_add(&self._value, delta)

    cpdef int64_t fetch_sub(self, int64_t delta=1):
        return so_fetch_sub(&self._value, delta)

    cpdef int64_t load(self):
        return so_load(&self._value)

    cpdef void store(self, int64_t value):
        so_store(&self._value, value)

    def __repr__(self):
        return f"AtomicCounter({self.load()})"


cdef class AtomicFlag:
    """test-and-set flag; never blocks."""

    cdef char _flag

    cpdef bint test_and_set(self):
        return so_test_and_set(&self._flag) != 0

    cpdef void clear(self):
        so_clear(&self._flag)

    @property
    def is_set(self):
        return self._flag != 0


cdef class AtomicIntArray:
    """Fixed-length array of atomic integers (hybrid-queue delegation counters)."""

    cdef int64_t *_data
    cdef Py_ssize_t _n

    def __cinit__(self, Py_ssize_t n):
        if n < 1:
            raise ValueError("AtomicIntArray length must be >= 1")
        self._data = <int64_t *> calloc(n, sizeof(int64_t))
        if self._data == NULL:
            raise MemoryError()
        self._n = n

    def __dealloc__(self):
        free(self._data)

    def __len__(self):
        return self._n

    cdef inline Py_ssize_t _check(self, Py_ssize_t i) except -1:
        if i < 0 or i >= self._n:
            raise IndexError(i)
        return i

    cpdef int64_t fetch_add(self, Py_ssize_t i, int64_t delta=1):
        self._check(i)
        return so_fetch_add(&self._data[i], delta)

    cpdef int64_t fetch_sub(self, Py_ssize_t i, int64_t delta=1):
        self._check(i)
        return so_fetch_sub(&self._data[i], delta)

    cpdef int64_t load(self, Py_ssize_t i):
        self._check(i)
        return so_load(&self._data[i])

    def snapshot(self):
        return [so_load(&self._data[i]) for i in range(self._n)]


cdef class NonBlockingReorderer:
    """Bounded circular reorder buffer with a try-lock exit section.

    ``sink`` is called with each unit, in serial order, while the exit flag
    is held. It must not call back into this reorderer.
    """

    cdef int64_t _next
    cdef int64_t _capacity
    cdef int64_t _mask
    cdef PyObject **_slots
    cdef char _flag
    cdef object _sink

    def __cinit__(self, int64_t capacity, sink, int64_t start=1):
        if capacity < 1 or (capacity & (capacity - 1)) != 0:
            raise ValueError(f"capacity must be a power of two, got {capacity}")
        if start < 1:
            raise ValueError("start serial must be >= 1")
        self._slots = <PyObject **> calloc(capacity, sizeof(PyObject *))
        if self._slots == NULL:
            raise MemoryError()
        self._capacity = capacity
        self._mask = capacity - 1
        self._next = start
        self._sink = sink

    def __dealloc__(self):
        cdef int64_t i
        if self._slots != NULL:
            for i in range(self._capacity):
                Py_XDECREF(self._slots[i])
            free(self._slots)

    @property
    def capacity(self):
        return self._capacity

    @property
    def next(self):
        return so_load(&self._next)

    def slot(self, int64_t i):
        """Unit stored at slot ``i`` or None when EMPTY."""
        cdef PyObject *o = so_load_ptr(&self._slots[i & self._mask])
        if o == NULL:
            return None
        return <object> o

    def flag_test_and_set(self):
        return so_test_and_set(&self._flag) != 0

    def flag_clear(self):
        so_clear(&self._flag)

    cpdef bint try_add(self, unit) except -1:
        cdef int64_t t = unit.serial
        cdef int64_t n = so_load(&self._next)
        cdef PyObject *old
        if t >= n and t < n + self._capacity:
            Py_INCREF(unit)
            old = so_exchange_ptr(&self._slots[t & self._mask], <PyObject *> unit)
            if old != NULL:
                # duplicate serial: precondition broken, keep the newer unit
                Py_XDECREF(old)
            return True
        return False

    cpdef int64_t send_pending(self) except -1:
        cdef int64_t emitted = 0
        cdef int64_t n, i
        cdef PyObject *o
        cdef object unit
        while True:
            if so_test_and_set(&self._flag):
                return emitted
            try:
                while True:
                    n = so_load(&self._next)
                    i = n & self._mask
                    o = so_load_ptr(&self._slots[i])
                    if o == NULL:
                        so_clear(&self._flag)
                        break
                    unit = <object> o
                    self._sink(unit)
                    so_exchange_ptr(&self._slots[i], NULL)
                    Py_DECREF(unit)
                    so_fetch_add(&self._next, 1)
                    emitted += 1
            except BaseException:
                so_clear(&self._flag)
                raise
            if so_load_ptr(&self._slots[i]) == NULL:
                return emitted

    cpdef bint send(self, unit) except -1:
        cdef bint ok = self.try_add(unit)
        self.send_pending()
        return ok


def hybrid_consume(master, list queues, AtomicIntArray counts, operate, Py_ssize_t budget):
    """Drain bucket indices from ``master``; see ``partition.hq_consume``."""
    cdef Py_ssize_t processed = 0
    cdef Py_ssize_t b
    cdef int64_t *data = counts._data
    popleft = master.popleft
    while processed < budget:
        try:
            b = popleft()
        except IndexError:
            break
        if so_fetch_add(&data[b], 1) == 0:
            q = queues[b]
            while True:
                operate(q.popleft())
                processed += 1
                if so_fetch_sub(&data[b], 1) <= 1:
                    break
    return processed
