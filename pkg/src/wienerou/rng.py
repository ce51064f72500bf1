"""Counter-based keyed random streams.

Every standard normal used anywhere in the package is a pure function of
``(seed, path_id, stream_id, counter)``.  Keys are built by chained
SplitMix64 finalisation, a draw is ``mix64(key + (counter + 1) * GOLDEN)``
turned into a uniform in (0, 1) and then into a normal by inverse CDF
(Wichura's AS241).  Because nothing is stateful, the same numbers come out
regardless of chunking, evaluation order or worker count.
"""

import math

import numba as nb
import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# stream purposes; the low 32 bits of a stream id carry a coordinate index
OU_NOISE = 1
Y_NOISE = 2
THETA = 3
MEHLER = 4
INITIAL = 5
LEVY = 6
GAUSS_MAX = 7
SCAN = 8
TENSOR_XI = 9
EXPERIMENT = 10


def stream_id(purpose, index=0):
    """Pack a purpose tag and a coordinate index into one 64-bit stream id."""
    return (int(purpose) << 32) | int(index)


@nb.njit(inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def stream_key(seed, path_id, stream):
    """Derive the 64-bit key of stream ``(seed, path_id, stream)``."""
    k = _mix64(np.uint64(seed) + _GOLDEN)
    k = _mix64(k ^ (np.uint64(path_id) * _M1 + _GOLDEN))
    k = _mix64(k ^ (np.uint64(stream) * _M2 + _GOLDEN))
    return k


@nb.njit(inline="always")
def uniform_at(key, counter):
    x = _mix64(key + (np.uint64(counter) + np.uint64(1)) * _GOLDEN)
    return (float(x >> _S11) + 0.5) * _INV53


@nb.njit(cache=True)
def ndtri(p):
    """Standard normal quantile (AS241, PPND16; ~1e-16 relative)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    v = num / den
    return -v if q < 0.0 else v


@nb.njit(inline="always")
def normal_at(key, counter):
    return ndtri(uniform_at(key, counter))


@nb.njit(cache=True)
def _fill_normals(seed, path_ids, stream, start, count, out):
    for p in range(path_ids.shape[0]):
        key = stream_key(seed, path_ids[p], stream)
        for c in range(count):
            out[p, c] = normal_at(key, start + c)


@nb.njit(cache=True)
def _fill_uniforms(seed, path_ids, stream, start, count, out):
    for p in range(path_ids.shape[0]):
        key = stream_key(seed, path_ids[p], stream)
        for c in range(count):
            out[p, c] = uniform_at(key, start + c)


@nb.njit(cache=True)
def _fill_normal_grid(seed, path_ids, purpose, n_streams, count, out):
    # out[p, c, i] = draw c of stream (purpose << 32 | i) for path p
    base = np.uint64(purpose) << np.uint64(32)
    for p in range(path_ids.shape[0]):
        for i in range(n_streams):
            key = stream_key(seed, path_ids[p], base | np.uint64(i))
            for c in range(count):
                out[p, c, i] = normal_at(key, c)


def _as_ids(path_ids):
    return np.atleast_1d(np.asarray(path_ids, dtype=np.uint64))


def rng_stream(seed, path_id, stream, count, start=0):
    """Return ``count`` standard normals of stream ``(seed, path_id, stream)``.

    Draw ``c`` of a stream is always the same number, so ``start`` lets a
    caller fetch any window without generating the prefix.
    """
    out = np.empty((1, int(count)))
    _fill_normals(np.uint64(seed), _as_ids(path_id), np.uint64(stream),
                  int(start), int(count), out)
    return out[0]


def normals(seed, path_ids, stream, count, start=0):
    """Normals for several paths of one stream; shape ``(len(path_ids), count)``."""
    ids = _as_ids(path_ids)
    out = np.empty((ids.shape[0], int(count)))
    _fill_normals(np.uint64(seed), ids, np.uint64(stream), int(start), int(count), out)
    return out


def uniforms(seed, path_ids, stream, count, start=0):
    ids = _as_ids(path_ids)
    out = np.empty((ids.shape[0], int(count)))
    _fill_uniforms(np.uint64(seed), ids, np.uint64(stream), int(start), int(count), out)
    return out


def normal_grid(seed, path_ids, purpose, n_streams, count):
    """Normals indexed ``[path, draw, coordinate]``; coordinate ``i`` uses its own stream."""
    ids = _as_ids(path_ids)
    out = np.empty((ids.shape[0], int(count), int(n_streams)))
    _fill_normal_grid(np.uint64(seed), ids, np.uint64(purpose), int(n_streams),
                      int(count), out)
    return out
