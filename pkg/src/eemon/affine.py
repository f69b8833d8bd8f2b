"""Affine expressions of a real decision vector, with complex coefficients.

All optimization variables in this package are real; a complex quantity is
represented as an affine map x -> M x + c with complex M and c, so conjugation
stays affine and Hermitian matrix expressions keep exact structure. `CAff`
carries complex values, `RAff` strictly real ones. The module-level helpers
(`creal`, `hconj`, `ccat`, `cblock`, ...) dispatch between these objects and
plain numpy arrays, which lets the same assembly code either evaluate a matrix
numerically or emit solver constraints, depending on what is fed in.

`ProgramBuilder` turns accumulated variables, cones and an objective into a
`ConeProgram` plus a `Recovery` object that maps solution vectors back to the
named variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import ConeProgram


def _size(shape) -> int:
    return int(np.prod(shape, dtype=np.int64))


def _pad(coeff: np.ndarray, n: int) -> np.ndarray:
    if coeff.shape[1] == n:
        return coeff
    out = np.zeros((coeff.shape[0], n), dtype=coeff.dtype)
    out[:, : coeff.shape[1]] = coeff
    return out


def _is_aff(x) -> bool:
    return isinstance(x, (CAff, RAff))


class CAff:
    """Complex-valued affine expression, stored flat in row-major order."""

    __slots__ = ("coeff", "const", "shape")

    # make ndarray @ CAff and friends defer to the reflected methods here
    __array_ufunc__ = None

    def __init__(self, coeff, const, shape):
        self.shape = tuple(int(s) for s in shape)
        self.coeff = np.asarray(coeff, dtype=complex).reshape(_size(self.shape), -1)
        self.const = np.asarray(const, dtype=complex).reshape(_size(self.shape))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.coeff.shape[0]

    @property
    def ncols(self) -> int:
        return self.coeff.shape[1]

    def __repr__(self):
        return f"CAff(shape={self.shape}, nvars={self.ncols})"

    # -- algebra ----------------------------------------------------------

    def _binop(self, other, sign):
        o = as_caff(other)
        a, b = _broadcast_pair(self, o)
        n = max(a.ncols, b.ncols)
        return CAff(
            _pad(a.coeff, n) + sign * _pad(b.coeff, n),
            a.const + sign * b.const,
            a.shape,
        )

    def __add__(self, other):
        return self._binop(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binop(other, -1.0)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return CAff(-self.coeff, -self.const, self.shape)

    def __mul__(self, other):
        if _is_aff(other):
            raise TypeError("product of two affine expressions is not affine")
        o = np.asarray(other, dtype=complex)
        if o.ndim == 0:
            z = complex(o)
            return CAff(self.coeff * z, self.const * z, self.shape)
        if self.ndim == 0:
            flat = o.ravel()
            return CAff(flat[:, None] * self.coeff, flat * self.const[0], o.shape)
        if o.shape == self.shape:
            flat = o.ravel()
            return CAff(flat[:, None] * self.coeff, flat * self.const, self.shape)
        raise ValueError(f"elementwise product shapes {self.shape} and {o.shape}")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / complex(other))

    def __matmul__(self, other):
        if _is_aff(other):
            raise TypeError("product of two affine expressions is not affine")
        o = np.asarray(other, dtype=complex)
        if self.ndim == 0 or o.ndim == 0:
            raise ValueError("matmul needs 1-d or 2-d operands")
        T = self.coeff.reshape(self.shape + (self.ncols,))
        C = self.const.reshape(self.shape)
        if self.ndim == 1 and o.ndim == 1:
            return CAff(np.einsum("kv,k->v", T, o)[None, :], [C @ o], ())
        if self.ndim == 1 and o.ndim == 2:
            return CAff(np.einsum("kv,kq->qv", T, o), C @ o, (o.shape[1],))
        if self.ndim == 2 and o.ndim == 1:
            return CAff(np.einsum("mkv,k->mv", T, o), C @ o, (self.shape[0],))
        if self.ndim == 2 and o.ndim == 2:
            m, q = self.shape[0], o.shape[1]
            coeff = np.einsum("mkv,kq->mqv", T, o).reshape(m * q, self.ncols)
            return CAff(coeff, (C @ o).reshape(-1), (m, q))
        raise ValueError("matmul supports only 1-d and 2-d operands")

    def __rmatmul__(self, other):
        if _is_aff(other):
            raise TypeError("product of two affine expressions is not affine")
        o = np.asarray(other, dtype=complex)
        if self.ndim == 0 or o.ndim == 0:
            raise ValueError("matmul needs 1-d or 2-d operands")
        T = self.coeff.reshape(self.shape + (self.ncols,))
        C = self.const.reshape(self.shape)
        if o.ndim == 1 and self.ndim == 1:
            return CAff(np.einsum("m,mv->v", o, T)[None, :], [o @ C], ())
        if o.ndim == 1 and self.ndim == 2:
            return CAff(np.einsum("m,mkv->kv", o, T), o @ C, (self.shape[1],))
        if o.ndim == 2 and self.ndim == 1:
            return CAff(np.einsum("pm,mv->pv", o, T), o @ C, (o.shape[0],))
        if o.ndim == 2 and self.ndim == 2:
            p, k = o.shape[0], self.shape[1]
            coeff = np.einsum("pm,mkv->pkv", o, T).reshape(p * k, self.ncols)
            return CAff(coeff, (o @ C).reshape(-1), (p, k))
        raise ValueError("matmul supports only 1-d and 2-d operands")

    # -- structure --------------------------------------------------------

    def conj(self):
        return CAff(self.coeff.conj(), self.const.conj(), self.shape)

    @property
    def T(self):
        if self.ndim < 2:
            return self
        m, k = self.shape
        coeff = self.coeff.reshape(m, k, self.ncols).transpose(1, 0, 2)
        return CAff(coeff.reshape(k * m, self.ncols), self.const.reshape(m, k).T.reshape(-1), (k, m))

    @property
    def H(self):
        return self.conj().T if self.ndim == 2 else self.conj()

    @property
    def real(self):
        return RAff(self.coeff.real, self.const.real, self.shape)

    @property
    def imag(self):
        return RAff(self.coeff.imag, self.const.imag, self.shape)

    def reshape(self, shape):
        if _size(shape) != self.size:
            raise ValueError(f"cannot reshape {self.shape} to {shape}")
        return CAff(self.coeff, self.const, shape)

    def vec(self):
        return self.reshape((self.size,))

    def __getitem__(self, key):
        idx = np.arange(self.size).reshape(self.shape)[key]
        flat = np.atleast_1d(idx).ravel()
        return CAff(self.coeff[flat], self.const[flat], np.shape(idx))

    def value(self, x):
        """Evaluate at a numeric decision vector."""
        x = np.asarray(x, dtype=float)
        v = self.coeff @ x[: self.ncols] + self.const
        return complex(v[0]) if self.shape == () else v.reshape(self.shape)


class RAff:
    """Real-valued affine expression. Only these may enter cone rows."""

    __slots__ = ("coeff", "const", "shape")

    __array_ufunc__ = None

    def __init__(self, coeff, const, shape):
        self.shape = tuple(int(s) for s in shape)
        self.coeff = np.asarray(coeff, dtype=float).reshape(_size(self.shape), -1)
        self.const = np.asarray(const, dtype=float).reshape(_size(self.shape))

    ndim = CAff.ndim
    size = CAff.size
    ncols = CAff.ncols

    def __repr__(self):
        return f"RAff(shape={self.shape}, nvars={self.ncols})"

    def _binop(self, other, sign):
        o = as_raff(other)
        a, b = _broadcast_pair(self, o)
        n = max(a.ncols, b.ncols)
        return RAff(
            _pad(a.coeff, n) + sign * _pad(b.coeff, n),
            a.const + sign * b.const,
            a.shape,
        )

    def __add__(self, other):
        if isinstance(other, RAff):
            return self._binop(other, 1.0)
        if isinstance(other, CAff) or np.iscomplexobj(np.asarray(other)):
            return as_caff(self) + other
        return self._binop(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, RAff):
            return self._binop(other, -1.0)
        if isinstance(other, CAff) or np.iscomplexobj(np.asarray(other)):
            return as_caff(self) - other
        return self._binop(other, -1.0)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return RAff(-self.coeff, -self.const, self.shape)

    def __mul__(self, other):
        if _is_aff(other):
            raise TypeError("product of two affine expressions is not affine")
        res = as_caff(self) * other
        return res if np.iscomplexobj(np.asarray(other)) else res.real

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / other)

    def __matmul__(self, other):
        res = as_caff(self) @ other
        return res if np.iscomplexobj(np.asarray(other)) else res.real

    def __rmatmul__(self, other):
        res = np.asarray(other) @ as_caff(self)
        return res if np.iscomplexobj(np.asarray(other)) else res.real

    @property
    def T(self):
        if self.ndim < 2:
            return self
        m, k = self.shape
        coeff = self.coeff.reshape(m, k, self.ncols).transpose(1, 0, 2)
        return RAff(coeff.reshape(k * m, self.ncols), self.const.reshape(m, k).T.reshape(-1), (k, m))

    @property
    def real(self):
        return self

    @property
    def imag(self):
        return RAff(np.zeros_like(self.coeff), np.zeros_like(self.const), self.shape)

    def reshape(self, shape):
        if _size(shape) != self.size:
            raise ValueError(f"cannot reshape {self.shape} to {shape}")
        return RAff(self.coeff, self.const, shape)

    def vec(self):
        return self.reshape((self.size,))

    def __getitem__(self, key):
        idx = np.arange(self.size).reshape(self.shape)[key]
        flat = np.atleast_1d(idx).ravel()
        return RAff(self.coeff[flat], self.const[flat], np.shape(idx))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        v = self.coeff @ x[: self.ncols] + self.const
        return float(v[0]) if self.shape == () else v.reshape(self.shape)


def as_caff(x) -> CAff:
    if isinstance(x, CAff):
        return x
    if isinstance(x, RAff):
        return CAff(x.coeff.astype(complex), x.const.astype(complex), x.shape)
    arr = np.asarray(x, dtype=complex)
    return CAff(np.zeros((arr.size, 0), dtype=complex), arr.reshape(-1), arr.shape)


def as_raff(x) -> RAff:
    if isinstance(x, RAff):
        return x
    if isinstance(x, CAff):
        if np.any(x.coeff.imag) or np.any(x.const.imag):
            raise TypeError("complex expression where a real one is required")
        return x.real
    arr = np.asarray(x)
    if np.iscomplexobj(arr):
        raise TypeError("complex constant where a real one is required")
    arr = arr.astype(float)
    return RAff(np.zeros((arr.size, 0)), arr.reshape(-1), arr.shape)


def _tile(aff, shape):
    reps = _size(shape)
    cls = type(aff)
    return cls(np.repeat(aff.coeff, reps, axis=0), np.repeat(aff.const, reps), shape)


def _broadcast_pair(a, b):
    if a.shape == b.shape:
        return a, b
    if a.shape == ():
        return _tile(a, b.shape), b
    if b.shape == ():
        return a, _tile(b, a.shape)
    raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


# -- numpy/affine dispatch helpers -----------------------------------------


def creal(x):
    if _is_aff(x):
        return x.real
    return np.real(np.asarray(x))


def cimag(x):
    if _is_aff(x):
        return x.imag
    return np.imag(np.asarray(x))


def hconj(x):
    """Conjugate transpose for 2-d, plain conjugate otherwise."""
    if _is_aff(x):
        return x.H if isinstance(x, CAff) else (x.T if x.ndim == 2 else x)
    a = np.asarray(x)
    return a.conj().T if a.ndim == 2 else np.conj(a)


def crow(x):
    if _is_aff(x):
        return x.reshape((1, x.size))
    a = np.asarray(x)
    return a.reshape(1, a.size)


def ccol(x):
    if _is_aff(x):
        return x.reshape((x.size, 1))
    a = np.asarray(x)
    return a.reshape(a.size, 1)


def ccat(*parts):
    """Concatenate scalars and vectors into one 1-d expression or array."""
    if not any(_is_aff(p) for p in parts):
        return np.concatenate([np.atleast_1d(np.asarray(p)) for p in parts])
    real = all(
        isinstance(p, RAff) or (not _is_aff(p) and not np.iscomplexobj(np.asarray(p)))
        for p in parts
    )
    affs = [as_caff(p) for p in parts]
    n = max(a.ncols for a in affs)
    coeff = np.vstack([_pad(a.coeff, n) for a in affs])
    const = np.concatenate([a.const for a in affs])
    out = CAff(coeff, const, (len(const),))
    return out.real if real else out


def cblock(rows):
    """Assemble a block matrix. Entries must be 2-d, scalars are 1x1."""
    rows = [[_as_block(e) for e in row] for row in rows]
    heights = [row[0].shape[0] for row in rows]
    widths = [e.shape[1] for e in rows[0]]
    for row in rows:
        if len(row) != len(widths):
            raise ValueError("ragged block rows")
        for e, w in zip(row, widths):
            if e.shape[1] != w or e.shape[0] != row[0].shape[0]:
                raise ValueError("inconsistent block sizes")

    flat = [e for row in rows for e in row]
    if not any(_is_aff(e) for e in flat):
        return np.block([[np.asarray(e) for e in row] for row in rows])

    real = all(
        isinstance(e, RAff) or (not _is_aff(e) and not np.iscomplexobj(np.asarray(e)))
        for e in flat
    )
    affs = [[as_caff(e) for e in row] for row in rows]
    n = max(a.ncols for row in affs for a in row)
    R, C = sum(heights), sum(widths)
    coeff = np.zeros((R, C, n), dtype=complex)
    const = np.zeros((R, C), dtype=complex)
    r0 = 0
    for row, h in zip(affs, heights):
        c0 = 0
        for a, w in zip(row, widths):
            coeff[r0 : r0 + h, c0 : c0 + w] = _pad(a.coeff, n).reshape(h, w, n)
            const[r0 : r0 + h, c0 : c0 + w] = a.const.reshape(h, w)
            c0 += w
        r0 += h
    out = CAff(coeff.reshape(R * C, n), const.reshape(-1), (R, C))
    return out.real if real else out


def _as_block(e):
    if _is_aff(e):
        if e.ndim == 0:
            return e.reshape((1, 1))
        if e.ndim == 1:
            raise ValueError("block entries must be 2-d, use crow or ccol")
        return e
    a = np.asarray(e)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        raise ValueError("block entries must be 2-d, use crow or ccol")
    return a


def real_stack(x):
    """Flatten to a real vector, complex entries contributing (Re, Im) pairs.

    The euclidean norm is preserved, which is what the second-order cone
    encodings rely on.
    """
    if isinstance(x, RAff):
        return x.vec()
    if isinstance(x, CAff):
        coeff = np.vstack([x.coeff.real, x.coeff.imag])
        const = np.concatenate([x.const.real, x.const.imag])
        return RAff(coeff, const, (2 * x.size,))
    a = np.asarray(x).ravel()
    if np.iscomplexobj(a):
        return np.concatenate([a.real, a.imag])
    return a.astype(float)


# -- program builder --------------------------------------------------------


@dataclass(frozen=True)
class Recovery:
    """Maps a solved decision vector back to named variables."""

    n: int
    table: dict
    obj_row: np.ndarray
    obj_const: float
    sense: float

    def value(self, x, name: str):
        kind, shape, sl_re, sl_im = self.table[name]
        x = np.asarray(x, dtype=float)
        if kind == "real":
            out = x[sl_re]
            return float(out[0]) if shape == () else out.reshape(shape)
        z = x[sl_re] + 1j * x[sl_im]
        return complex(z[0]) if shape == () else z.reshape(shape)

    def extract(self, x) -> dict:
        return {name: self.value(x, name) for name in self.table}

    def objective(self, x) -> float:
        """Objective in the sense it was declared (before min conversion)."""
        return float(self.obj_row @ np.asarray(x, dtype=float) + self.obj_const)


class ProgramBuilder:
    """Accumulates variables and cones, then emits an explicit ConeProgram."""

    def __init__(self):
        self._n = 0
        self._table = {}
        self._zero = []
        self._nonneg = []
        self._soc = []
        self._rsoc = []
        self._exp = []
        self._psd = []
        self._obj = None
        self._sense = 1.0

    @property
    def num_vars(self) -> int:
        return self._n

    def real_var(self, name: str, shape=()) -> RAff:
        if name in self._table:
            raise ValueError(f"variable {name!r} already declared")
        size = _size(shape)
        sl = slice(self._n, self._n + size)
        self._n += size
        self._table[name] = ("real", tuple(shape), sl, None)
        coeff = np.zeros((size, self._n))
        coeff[:, sl] = np.eye(size)
        return RAff(coeff, np.zeros(size), shape)

    def complex_var(self, name: str, shape=()) -> CAff:
        if name in self._table:
            raise ValueError(f"variable {name!r} already declared")
        size = _size(shape)
        sl_re = slice(self._n, self._n + size)
        sl_im = slice(self._n + size, self._n + 2 * size)
        self._n += 2 * size
        self._table[name] = ("complex", tuple(shape), sl_re, sl_im)
        coeff = np.zeros((size, self._n), dtype=complex)
        rows = np.arange(size)
        coeff[rows, sl_re.start + rows] = 1.0
        coeff[rows, sl_im.start + rows] = 1.0j
        return CAff(coeff, np.zeros(size, dtype=complex), shape)

    def _rows(self, aff: RAff):
        return _pad(aff.coeff, self._n).astype(float), aff.const.astype(float).copy()

    def add_zero(self, expr):
        """Constrain an affine expression to vanish."""
        if isinstance(expr, CAff):
            self._zero.append(self._rows(expr.real))
            self._zero.append(self._rows(expr.imag))
        else:
            self._zero.append(self._rows(as_raff(expr)))

    def add_nonneg(self, expr):
        self._nonneg.append(self._rows(as_raff(expr)))

    def add_soc(self, radius, vector):
        """||vector|| <= radius, complex vectors allowed."""
        rows = ccat(as_raff(radius), real_stack(vector))
        self._soc.append(self._rows(as_raff(rows)))

    def add_rsoc(self, a, b, vector):
        """2 a b >= ||vector||^2 with a, b >= 0."""
        rows = ccat(as_raff(a), as_raff(b), real_stack(vector))
        self._rsoc.append(self._rows(as_raff(rows)))

    def add_exp(self, u, v, w):
        """(u, v, w) in the exponential cone: v exp(u / v) <= w."""
        rows = ccat(as_raff(u), as_raff(v), as_raff(w))
        self._exp.append(self._rows(as_raff(rows)))

    def add_psd(self, matrix):
        """Constrain a Hermitian (or real symmetric) expression to be PSD.

        Complex input of side m is embedded as the real symmetric 2m x 2m
        matrix [[Re, -Im], [Im, Re]], which is PSD exactly when the original
        is. Coefficients are symmetrized so the solver sees an exactly
        symmetric matrix regardless of rounding in the assembly.
        """
        if isinstance(matrix, CAff):
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValueError("psd argument must be square")
            m = matrix.shape[0]
            n = matrix.ncols
            re = matrix.coeff.real.reshape(m, m, n)
            im = matrix.coeff.imag.reshape(m, m, n)
            cre = matrix.const.real.reshape(m, m)
            cim = matrix.const.imag.reshape(m, m)
            coeff = np.zeros((2 * m, 2 * m, n))
            const = np.zeros((2 * m, 2 * m))
            coeff[:m, :m], coeff[m:, m:] = re, re
            coeff[:m, m:], coeff[m:, :m] = -im, im
            const[:m, :m], const[m:, m:] = cre, cre
            const[:m, m:], const[m:, :m] = -cim, cim
            side = 2 * m
        else:
            matrix = as_raff(matrix)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValueError("psd argument must be square")
            side = matrix.shape[0]
            n = matrix.ncols
            coeff = matrix.coeff.reshape(side, side, n)
            const = matrix.const.reshape(side, side)
        coeff = (coeff + coeff.transpose(1, 0, 2)) / 2
        const = (const + const.T) / 2
        self._psd.append(
            (_pad(coeff.reshape(side * side, n), self._n), const.reshape(-1).copy(), side)
        )

    def minimize(self, expr):
        self._set_objective(expr, 1.0)

    def maximize(self, expr):
        self._set_objective(expr, -1.0)

    def _set_objective(self, expr, sense):
        aff = as_raff(expr)
        if aff.shape not in ((), (1,)):
            raise ValueError("objective must be scalar")
        self._obj = self._rows(aff)
        self._sense = sense

    def build(self):
        n = self._n

        def padded(pairs):
            return [(_pad(A, n), b) for A, b in pairs]

        if self._obj is None:
            obj_row, obj_const = np.zeros(n), 0.0
        else:
            obj_row, obj_const = _pad(self._obj[0], n)[0], float(self._obj[1][0])
        program = ConeProgram(
            n=n,
            c=self._sense * obj_row,
            c0=self._sense * obj_const,
            zero=padded(self._zero),
            nonneg=padded(self._nonneg),
            soc=padded(self._soc),
            rsoc=padded(self._rsoc),
            expcone=padded(self._exp),
            psd=[(_pad(A, n), b, side) for A, b, side in self._psd],
        )
        recovery = Recovery(
            n=n,
            table=dict(self._table),
            obj_row=obj_row,
            obj_const=obj_const,
            sense=self._sense,
        )
        return program, recovery
