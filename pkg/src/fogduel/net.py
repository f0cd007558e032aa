"""Recurrent dueling Q-network in plain numpy, double precision.

Architecture is fixed: affine encoder + ReLU, one LSTM cell (gate order
input/forget/cell/output), and dueling value/advantage heads with
mean-subtracted aggregation. Gradients are exact BPTT over a whole sequence,
verified against central differences.

Every code path advances the recurrence through the same single-step cell, so
splitting a sequence at any index and carrying the hidden state reproduces the
unsplit computation bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

QNET_LAYOUT_VERSION = "qnet-v1"
_MAGIC = b"FDQNPAR1"

ARRAY_FIELDS = ("w_enc", "b_enc", "w_x", "w_h", "b_gates", "w_val", "b_val", "w_adv", "b_adv")


class ParamsFormatError(ValueError):
    """Bad parameter blob: wrong magic/version, shape mismatch, or truncation."""


@dataclass
class QNetParams:
    w_enc: np.ndarray  # (D, H)
    b_enc: np.ndarray  # (H,)
    w_x: np.ndarray  # (H, 4M)
    w_h: np.ndarray  # (M, 4M)
    b_gates: np.ndarray  # (4M,)
    w_val: np.ndarray  # (M, 1)
    b_val: np.ndarray  # (1,)
    w_adv: np.ndarray  # (M, A)
    b_adv: np.ndarray  # (A,)
    use_lstm: bool = True

    @property
    def in_dim(self) -> int:
        return self.w_enc.shape[0]

    @property
    def enc_dim(self) -> int:
        return self.w_enc.shape[1]

    @property
    def cell_dim(self) -> int:
        return self.w_h.shape[0]

    @property
    def n_actions(self) -> int:
        return self.w_adv.shape[1]

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in ARRAY_FIELDS]

    def copy(self) -> "QNetParams":
        return QNetParams(
            **{name: arr.copy() for name, arr in self.arrays()},
            use_lstm=self.use_lstm,
        )


@dataclass
class Gradients:
    w_enc: np.ndarray
    b_enc: np.ndarray
    w_x: np.ndarray
    w_h: np.ndarray
    b_gates: np.ndarray
    w_val: np.ndarray
    b_val: np.ndarray
    w_adv: np.ndarray
    b_adv: np.ndarray

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in ARRAY_FIELDS]


def zeros_gradients(params: QNetParams) -> Gradients:
    return Gradients(**{name: np.zeros_like(arr) for name, arr in params.arrays()})


@dataclass
class HiddenState:
    h: np.ndarray  # (M,)
    c: np.ndarray  # (M,)

    def copy(self) -> "HiddenState":
        return HiddenState(self.h.copy(), self.c.copy())


def zero_hidden(params: QNetParams) -> HiddenState:
    m = params.cell_dim
    return HiddenState(np.zeros(m), np.zeros(m))


def init_params(
    seed: int,
    in_dim: int = 24,
    enc_dim: int = 64,
    cell_dim: int = 64,
    n_actions: int = 10,
    use_lstm: bool = True,
) -> QNetParams:
    """Seeded uniform(+-1/sqrt(fan_in)) weights; forget-gate bias starts at 1."""
    rng = np.random.default_rng(seed)

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    b_gates = np.zeros(4 * cell_dim)
    b_gates[cell_dim : 2 * cell_dim] = 1.0
    return QNetParams(
        w_enc=uniform(in_dim, (in_dim, enc_dim)),
        b_enc=np.zeros(enc_dim),
        w_x=uniform(enc_dim, (enc_dim, 4 * cell_dim)),
        w_h=uniform(cell_dim, (cell_dim, 4 * cell_dim)),
        b_gates=b_gates,
        w_val=uniform(cell_dim, (cell_dim, 1)),
        b_val=np.zeros(1),
        w_adv=uniform(cell_dim, (cell_dim, n_actions)),
        b_adv=np.zeros(n_actions),
        use_lstm=use_lstm,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _cell_step(params: QNetParams, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    """One decision step for a (B, D) batch. Returns (q, h', c', cache)."""
    m = params.cell_dim
    e = np.maximum(x @ params.w_enc + params.b_enc, 0.0)
    if params.use_lstm:
        z = e @ params.w_x + h @ params.w_h + params.b_gates
        i = _sigmoid(z[:, :m])
        f = _sigmoid(z[:, m : 2 * m])
        g = np.tanh(z[:, 2 * m : 3 * m])
        o = _sigmoid(z[:, 3 * m :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        head_in = h_new
    else:
        i = f = g = o = tanh_c = None
        h_new, c_new = h, c
        head_in = e
    adv = head_in @ params.w_adv + params.b_adv
    val = head_in @ params.w_val + params.b_val
    q = val + adv - adv.mean(axis=1, keepdims=True)
    cache = {
        "x": x,
        "e": e,
        "h_prev": h,
        "c_prev": c,
        "i": i,
        "f": f,
        "g": g,
        "o": o,
        "c": c_new,
        "tanh_c": tanh_c,
        "head_in": head_in,
    }
    return q, h_new, c_new, cache


def forward_batch(params: QNetParams, x: np.ndarray, h0: np.ndarray, c0: np.ndarray):
    """Process (B, T, D) -> q (B, T, A); returns (q, h_T, c_T, caches)."""
    b, t, d = x.shape
    assert d == params.in_dim
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input features")
    q_all = np.empty((b, t, params.n_actions))
    h, c = h0, c0
    caches = []
    for step in range(t):
        q, h, c, cache = _cell_step(params, x[:, step, :], h, c)
        q_all[:, step, :] = q
        caches.append(cache)
    return q_all, h, c, caches


def forward(params: QNetParams, seq: np.ndarray, init: HiddenState | None = None):
    """Single sequence (T, D) -> (q (T, A), final HiddenState)."""
    seq = np.asarray(seq, dtype=np.float64)
    assert seq.ndim == 2 and seq.shape[0] >= 1
    if init is None:
        init = zero_hidden(params)
    q, h, c, _ = forward_batch(params, seq[None, :, :], init.h[None, :], init.c[None, :])
    return q[0], HiddenState(h[0], c[0])


def forward_step(params: QNetParams, x: np.ndarray, hidden: HiddenState):
    """One step (D,) -> (q (A,), new HiddenState)."""
    q, h, c, _ = _cell_step(params, np.asarray(x, dtype=np.float64)[None, :], hidden.h[None, :], hidden.c[None, :])
    return q[0], HiddenState(h[0], c[0])


def backward_batch(params: QNetParams, caches: list[dict], dq: np.ndarray) -> Gradients:
    """Exact gradients of sum(dq * q) over a cached forward pass."""
    b, t, a = dq.shape
    m = params.cell_dim
    g = zeros_gradients(params)
    dh_next = np.zeros((b, m))
    dc_next = np.zeros((b, m))
    for step in reversed(range(t)):
        cache = caches[step]
        dq_t = dq[:, step, :]
        dadv = dq_t - dq_t.mean(axis=1, keepdims=True)
        dval = dq_t.sum(axis=1, keepdims=True)
        head_in = cache["head_in"]
        g.w_adv += head_in.T @ dadv
        g.b_adv += dadv.sum(axis=0)
        g.w_val += head_in.T @ dval
        g.b_val += dval.sum(axis=0)
        dhead = dadv @ params.w_adv.T + dval @ params.w_val.T
        if params.use_lstm:
            dh = dhead + dh_next
            do = dh * cache["tanh_c"]
            dc = dc_next + dh * cache["o"] * (1.0 - cache["tanh_c"] ** 2)
            df = dc * cache["c_prev"]
            di = dc * cache["g"]
            dg_ = dc * cache["i"]
            dc_next = dc * cache["f"]
            dz = np.concatenate(
                [
                    di * cache["i"] * (1.0 - cache["i"]),
                    df * cache["f"] * (1.0 - cache["f"]),
                    dg_ * (1.0 - cache["g"] ** 2),
                    do * cache["o"] * (1.0 - cache["o"]),
                ],
                axis=1,
            )
            g.w_x += cache["e"].T @ dz
            g.w_h += cache["h_prev"].T @ dz
            g.b_gates += dz.sum(axis=0)
            de = dz @ params.w_x.T
            dh_next = dz @ params.w_h.T
        else:
            de = dhead
        denc = de * (cache["e"] > 0.0)
        g.w_enc += cache["x"].T @ denc
        g.b_enc += denc.sum(axis=0)
    return g


def backward(params: QNetParams, seq: np.ndarray, init: HiddenState | None, dq: np.ndarray) -> Gradients:
    """Gradients for a single (T, D) sequence given per-step dL/dq (T, A)."""
    seq = np.asarray(seq, dtype=np.float64)
    if init is None:
        init = zero_hidden(params)
    _, _, _, caches = forward_batch(params, seq[None, :, :], init.h[None, :], init.c[None, :])
    return backward_batch(params, caches, np.asarray(dq, dtype=np.float64)[None, :, :])


def finite_diff_check(
    params: QNetParams,
    seq: np.ndarray,
    probe_seed: int,
    n_coords: int = 200,
    step: float = 1e-5,
) -> float:
    """Max relative error between BPTT and central differences.

    Probes >= n_coords random parameter coordinates on the scalar
    L = 0.5 * sum(q^2); the analytic side is backward() with cotangent q.
    At an all-zero network on zero input both sides vanish identically, so
    the reported error is exactly 0 there.
    """
    seq = np.asarray(seq, dtype=np.float64)
    rng = np.random.default_rng(probe_seed)

    q0, _ = forward(params, seq)
    analytic = backward(params, seq, None, q0)

    def loss() -> float:
        q, _ = forward(params, seq)
        return 0.5 * float(np.sum(q * q))

    coords = []
    arrays = params.arrays()
    total = sum(arr.size for _, arr in arrays)
    n = min(n_coords, total)
    for _ in range(n):
        ai = int(rng.integers(len(arrays)))
        fi = int(rng.integers(arrays[ai][1].size))
        coords.append((ai, fi))

    max_rel = 0.0
    analytic_arrays = [arr for _, arr in analytic.arrays()]
    for ai, fi in coords:
        arr = arrays[ai][1]
        original = arr.flat[fi]
        arr.flat[fi] = original + step
        up = loss()
        arr.flat[fi] = original - step
        down = loss()
        arr.flat[fi] = original
        numeric = (up - down) / (2.0 * step)
        exact = analytic_arrays[ai].flat[fi]
        denom = max(abs(numeric), abs(exact), 1e-6)
        rel = abs(numeric - exact) / denom
        max_rel = max(max_rel, rel)
    return max_rel


# --- serialization ----------------------------------------------------------


def serialize_params(params: QNetParams) -> bytes:
    version = QNET_LAYOUT_VERSION.encode("utf-8")
    parts = [
        _MAGIC,
        struct.pack("<B", len(version)),
        version,
        struct.pack("<B", 1 if params.use_lstm else 0),
        struct.pack(
            "<IIII", params.in_dim, params.enc_dim, params.cell_dim, params.n_actions
        ),
    ]
    for _, arr in params.arrays():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def _expected_shapes(d: int, h: int, m: int, a: int) -> list[tuple[int, ...]]:
    return [(d, h), (h,), (h, 4 * m), (m, 4 * m), (4 * m,), (m, 1), (1,), (m, a), (a,)]


def deserialize_params(blob: bytes, expect_shapes: tuple[int, int, int, int] | None = None) -> QNetParams:
    """Parse a parameter blob; never partially loads.

    expect_shapes, when given, pins (in_dim, enc_dim, cell_dim, n_actions) so
    a blob from a differently shaped network is refused outright.
    """
    if len(blob) < len(_MAGIC) + 1 or blob[: len(_MAGIC)] != _MAGIC:
        raise ParamsFormatError("not a qnet parameter blob")
    pos = len(_MAGIC)
    vlen = blob[pos]
    pos += 1
    version = blob[pos : pos + vlen].decode("utf-8", errors="replace")
    pos += vlen
    if version != QNET_LAYOUT_VERSION:
        raise ParamsFormatError(f"layout version {version!r}, expected {QNET_LAYOUT_VERSION!r}")
    if len(blob) < pos + 1 + 16:
        raise ParamsFormatError("truncated header")
    use_lstm = bool(blob[pos])
    pos += 1
    d, h, m, a = struct.unpack_from("<IIII", blob, pos)
    pos += 16
    if expect_shapes is not None and (d, h, m, a) != tuple(expect_shapes):
        raise ParamsFormatError(
            f"blob carries shapes {(d, h, m, a)}, expected {tuple(expect_shapes)}"
        )
    arrays = {}
    for name, shape in zip(ARRAY_FIELDS, _expected_shapes(d, h, m, a)):
        count = int(np.prod(shape))
        nbytes = count * 8
        if len(blob) < pos + nbytes:
            raise ParamsFormatError(f"truncated blob while reading {name}")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(blob):
        raise ParamsFormatError("trailing bytes after parameter arrays")
    return QNetParams(**arrays, use_lstm=use_lstm)
