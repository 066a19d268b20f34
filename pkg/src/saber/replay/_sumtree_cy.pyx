# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled sum-tree with the same interface as ``_sumtree_py.SumTree``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef Py_ssize_t _leaf_count(Py_ssize_t capacity):
    cdef Py_ssize_t n = 1
    while n < capacity:
        n <<= 1
    return n


cdef class SumTree:
    cdef public Py_ssize_t capacity
    cdef public Py_ssize_t leaves
    cdef public object tree
    cdef double[::1] _t

    def __init__(self, Py_ssize_t capacity):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.leaves = _leaf_count(capacity)
        self.tree = np.zeros(2 * self.leaves, dtype=np.float64)
        self._t = self.tree

    @property
    def total(self):
        return self._t[1]

    def get(self, Py_ssize_t index):
        return self._t[self.leaves + index]

    def leaf_values(self):
        return self.tree[self.leaves: self.leaves + self.capacity].copy()

    cdef inline void _set(self, Py_ssize_t index, double value) nogil:
        cdef Py_ssize_t node = self.leaves + index
        self._t[node] = value
        node >>= 1
        while node:
            self._t[node] = self._t[2 * node] + self._t[2 * node + 1]
            node >>= 1

    def set(self, Py_ssize_t index, double value):
        if index < 0 or index >= self.capacity:
            raise IndexError(index)
        if not value >= 0.0:
            raise ValueError(f"sum-tree leaves must be non-negative, got {value}")
        self._set(index, value)

    def set_many(self, indices, values):
        cdef cnp.int64_t[::1] idx = np.ascontiguousarray(indices, dtype=np.int64)
        cdef double[::1] val = np.ascontiguousarray(values, dtype=np.float64)
        cdef Py_ssize_t k, n = idx.shape[0]
        if val.shape[0] != n:
            raise ValueError("indices and values differ in length")
        for k in range(n):
            if idx[k] < 0 or idx[k] >= self.capacity:
                raise IndexError(idx[k])
            if not val[k] >= 0.0:
                raise ValueError(f"sum-tree leaves must be non-negative, got {val[k]}")
        with nogil:
            for k in range(n):
                self._set(idx[k], val[k])

    cdef inline Py_ssize_t _find(self, double u) nogil:
        cdef Py_ssize_t node = 1, left
        cdef double lv
        if u < 0.0:
            u = 0.0
        while node < self.leaves:
            left = 2 * node
            lv = self._t[left]
            if u < lv or self._t[left + 1] <= 0.0:
                node = left
            else:
                u -= lv
                node = left + 1
        return node - self.leaves

    def find(self, double u):
        return self._find(u)

    def find_many(self, us):
        cdef double[::1] uv = np.ascontiguousarray(us, dtype=np.float64)
        cdef Py_ssize_t k, n = uv.shape[0]
        out = np.empty(n, dtype=np.int64)
        cdef cnp.int64_t[::1] o = out
        with nogil:
            for k in range(n):
                o[k] = self._find(uv[k])
        return out
