"""One-to-many LSTM surrogate: numpy forward pass, exact BPTT, Adam, training.

The network consumes a single state vector and emits the next L-1 vectors:
the first cell step reads x0, every later step reads the previous dense
read-out y_{t-1} (D-dimensional feedback). One LSTM layer, linear read-out:

    i = sigmoid(W_i x + U_i h + b_i)    f, o analogous
    g = tanh(W_g x + U_g h + b_g)
    c' = f*c + i*g,  h' = o*tanh(c'),  y = W_d h' + b_d

Backpropagation through time follows the same unrolling, including the
gradient path through fed-back outputs. Internally the four gates are stacked
into single (4H, .) matrices so each cell step is two matmuls.
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from mmsqc import arrayio
from mmsqc.dataset import SequenceDataset
from mmsqc.streams import substream

_CHECKPOINT_KIND = "mmsqc.checkpoint"
_CHECKPOINT_VERSION = 1

# payload tensor order of the checkpoint format
TENSOR_FIELDS = ("W_i", "W_f", "W_o", "W_g", "U_i", "U_f", "U_o", "U_g",
                 "b_i", "b_f", "b_o", "b_g", "W_d", "b_d")


@dataclass
class LstmParams:
    """Gate weights (H x D), recurrent weights (H x H), biases (H) and the
    dense read-out W_d (D x H), b_d (D)."""

    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_g: np.ndarray
    U_i: np.ndarray
    U_f: np.ndarray
    U_o: np.ndarray
    U_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray
    W_d: np.ndarray
    b_d: np.ndarray

    @property
    def dim(self) -> int:
        return self.W_i.shape[1]

    @property
    def hidden(self) -> int:
        return self.W_i.shape[0]

    def tensors(self):
        return [(name, getattr(self, name)) for name in TENSOR_FIELDS]

    def copy(self) -> "LstmParams":
        return LstmParams(**{name: arr.copy() for name, arr in self.tensors()})

    @classmethod
    def zeros(cls, dim: int, hidden: int) -> "LstmParams":
        shapes = _tensor_shapes(dim, hidden)
        return cls(**{name: np.zeros(shape) for name, shape in shapes.items()})


def _tensor_shapes(dim: int, hidden: int) -> dict:
    shapes = {}
    for gate in "ifog":
        shapes[f"W_{gate}"] = (hidden, dim)
        shapes[f"U_{gate}"] = (hidden, hidden)
        shapes[f"b_{gate}"] = (hidden,)
    shapes["W_d"] = (dim, hidden)
    shapes["b_d"] = (dim,)
    return shapes


def init_params(dim: int, hidden: int, rng: np.random.Generator) -> LstmParams:
    """Uniform +-sqrt(6/(fan_in+fan_out)) per tensor; forget bias starts at 1."""
    values = {}
    for name, shape in _tensor_shapes(dim, hidden).items():
        if name.startswith("b"):
            values[name] = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            values[name] = rng.uniform(-limit, limit, size=shape)
    values["b_f"] = np.ones(hidden)
    return LstmParams(**values)


def _sigmoid(z):
    # exp may overflow for strongly negative z; the result saturates to 0 exactly
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


class _FastParams:
    """Gate tensors stacked in i|f|o|g order for two-matmul cell steps."""

    __slots__ = ("W4", "U4", "b4", "W_d", "b_d", "dim", "hidden")

    def __init__(self, params: LstmParams):
        self.W4 = np.concatenate([params.W_i, params.W_f, params.W_o, params.W_g])
        self.U4 = np.concatenate([params.U_i, params.U_f, params.U_o, params.U_g])
        self.b4 = np.concatenate([params.b_i, params.b_f, params.b_o, params.b_g])
        self.W_d = params.W_d
        self.b_d = params.b_d
        self.dim = params.dim
        self.hidden = params.hidden


def _cell(fp: _FastParams, x, h, c):
    """One cell step on (B, .) arrays; returns (h', c', cache)."""
    H = fp.hidden
    z = x @ fp.W4.T
    z += h @ fp.U4.T
    z += fp.b4
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    o = _sigmoid(z[:, 2 * H:3 * H])
    g = np.tanh(z[:, 3 * H:])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    cache = {"x": x, "h_prev": h, "c_prev": c, "i": i, "f": f, "o": o, "g": g,
             "tanh_c": tanh_c, "h": h_new}
    return h_new, c_new, cache


def _forward(fp: _FastParams, x0: np.ndarray, seq_len: int):
    """Unrolled batch forward; x0 is (B, D). Returns ((B, L-1, D), caches)."""
    B = x0.shape[0]
    h = np.zeros((B, fp.hidden))
    c = np.zeros_like(h)
    x = x0
    ys, caches = [], []
    for _ in range(seq_len - 1):
        h, c, cache = _cell(fp, x, h, c)
        y = h @ fp.W_d.T + fp.b_d
        ys.append(y)
        caches.append(cache)
        x = y
    return np.stack(ys, axis=1), caches


def _backward(fp: _FastParams, caches: list, dY: np.ndarray) -> LstmParams:
    """Gradients for a batched (B, steps, D) loss gradient; sums over batch."""
    B, steps, _ = dY.shape
    H = fp.hidden
    dW4 = np.zeros_like(fp.W4)
    dU4 = np.zeros_like(fp.U4)
    db4 = np.zeros(4 * H)
    dW_d = np.zeros_like(fp.W_d)
    db_d = np.zeros_like(fp.b_d)
    dx_next = None
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))

    for t in range(steps - 1, -1, -1):
        cache = caches[t]
        x, h_prev, c_prev = cache["x"], cache["h_prev"], cache["c_prev"]
        i, f, o, g = cache["i"], cache["f"], cache["o"], cache["g"]
        tanh_c, h = cache["tanh_c"], cache["h"]

        dy = dY[:, t, :]
        if dx_next is not None:
            dy = dy + dx_next   # feedback: this output fed the next step's input
        dW_d += dy.T @ h
        db_d += dy.sum(axis=0)
        dh = dy @ fp.W_d + dh_next

        do = dh * tanh_c
        dc = dc_next + dh * o * (1.0 - tanh_c**2)
        dz = np.empty((B, 4 * H))
        dz[:, :H] = (dc * g) * i * (1.0 - i)
        dz[:, H:2 * H] = (dc * c_prev) * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = do * o * (1.0 - o)
        dz[:, 3 * H:] = (dc * i) * (1.0 - g**2)
        dc_next = dc * f

        dW4 += dz.T @ x
        dU4 += dz.T @ h_prev
        db4 += dz.sum(axis=0)
        dx_next = dz @ fp.W4
        dh_next = dz @ fp.U4

    return LstmParams(
        W_i=dW4[:H].copy(), W_f=dW4[H:2 * H].copy(),
        W_o=dW4[2 * H:3 * H].copy(), W_g=dW4[3 * H:].copy(),
        U_i=dU4[:H].copy(), U_f=dU4[H:2 * H].copy(),
        U_o=dU4[2 * H:3 * H].copy(), U_g=dU4[3 * H:].copy(),
        b_i=db4[:H].copy(), b_f=db4[H:2 * H].copy(),
        b_o=db4[2 * H:3 * H].copy(), b_g=db4[3 * H:].copy(),
        W_d=dW_d, b_d=db_d,
    )


# ---------------------------------------------------------------------------
# public operations


def cell_forward(x, h, c, params: LstmParams):
    """One LSTM cell step. Accepts (D,)/(H,) vectors or (B, .) batches;
    returns (h', c', cache) with the intermediates needed for BPTT."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    c = np.asarray(c, dtype=float)
    if x.shape[-1] != params.dim or h.shape[-1] != params.hidden or c.shape[-1] != params.hidden:
        raise ValueError(
            f"cell input shapes {x.shape}/{h.shape}/{c.shape} do not match "
            f"D={params.dim}, H={params.hidden}"
        )
    single = x.ndim == 1
    if single:
        x, h, c = x[None], h[None], c[None]
    h_new, c_new, cache = _cell(_FastParams(params), x, h, c)
    if single:
        return h_new[0], c_new[0], cache
    return h_new, c_new, cache


def readout(h, params: LstmParams):
    return h @ params.W_d.T + params.b_d


def one_to_many_forward(x0, seq_len: int, params: LstmParams):
    """Unroll the network from a single input: y_1 .. y_{L-1}.

    x0 is (D,) or (B, D); outputs are (L-1, D) or (B, L-1, D). Step 1
    consumes x0, later steps consume the previous read-out; h and c start
    at zero.
    """
    if seq_len < 2:
        raise ValueError("seq_len must be at least 2")
    x = np.asarray(x0, dtype=float)
    if x.shape[-1] != params.dim:
        raise ValueError(f"input dimension {x.shape[-1]} does not match D={params.dim}")
    single = x.ndim == 1
    ys, caches = _forward(_FastParams(params), x[None] if single else x, seq_len)
    return (ys[0] if single else ys), caches


def sequence_loss(pred, target) -> float:
    """Mean squared error over every predicted component."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def backward(caches: list, loss_grads, params: LstmParams) -> LstmParams:
    """Exact gradients of the unrolled network w.r.t. every parameter.

    `loss_grads` is dLoss/dy per step, same shape as the forward outputs.
    Gradients flowing through fed-back outputs are included. Batched inputs
    accumulate (sum) over the batch.
    """
    dY = np.asarray(loss_grads, dtype=float)
    if not caches:
        raise ValueError("no forward caches supplied")
    if dY.ndim == 2:
        dY = dY[None]
    if dY.ndim != 3 or dY.shape[1] != len(caches):
        raise ValueError(
            f"loss_grads shape {loss_grads.shape if hasattr(loss_grads, 'shape') else '?'} "
            f"does not match {len(caches)} cached steps"
        )
    return _backward(_FastParams(params), caches, dY)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: LstmParams
    v: LstmParams
    step: int = 0

    @classmethod
    def zeros(cls, dim: int, hidden: int) -> "AdamState":
        return cls(LstmParams.zeros(dim, hidden), LstmParams.zeros(dim, hidden))


def adam_step(params: LstmParams, grads: LstmParams, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[LstmParams, AdamState]:
    """Standard bias-corrected Adam update; returns new params and the
    advanced state (moments are updated in place, the input state is consumed)."""
    t = state.step + 1
    scale_m = lr / (1.0 - beta1**t)
    scale_v = 1.0 / np.sqrt(1.0 - beta2**t)
    new = params.copy()
    for name, _ in params.tensors():
        g = getattr(grads, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v)
        denom *= scale_v
        denom += eps
        update = m * scale_m
        update /= denom
        getattr(new, name)[...] -= update
    return new, replace(state, step=t)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    seq_len: int
    hidden: int = 2000
    learning_rate: float = 1e-5
    batch_size: int = 50
    epochs: int = 2000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.seq_len < 2:
            raise ValueError("seq_len must be at least 2")
        if min(self.hidden, self.batch_size, self.epochs) < 1:
            raise ValueError("hidden, batch_size and epochs must be positive")
        if self.learning_rate < 0.0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class TrainReport:
    train_loss: np.ndarray   # per epoch
    val_loss: np.ndarray     # per epoch
    best_epoch: int
    wall_time_s: float = 0.0


class TrainDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss in epoch {epoch}, batch {batch}")

    def __reduce__(self):
        return (TrainDivergedError, (self.epoch, self.batch))


def evaluate_loss(sequences: np.ndarray, params: LstmParams, seq_len: int,
                  chunk: int = 512) -> float:
    """Mean sequence loss over a (count, L, D) array, forward only."""
    if len(sequences) == 0:
        return float("nan")
    fp = _FastParams(params)
    total = 0.0
    for start in range(0, len(sequences), chunk):
        block = sequences[start:start + chunk]
        ys, _ = _forward(fp, block[:, 0, :], seq_len)
        total += np.sum((ys - block[:, 1:, :])**2)
    return float(total / (sequences.shape[0] * (seq_len - 1) * sequences.shape[2]))


def train(dataset: SequenceDataset, cfg: TrainConfig,
          progress=None) -> tuple[LstmParams, TrainReport]:
    """Mini-batch Adam training; returns the parameters with the lowest
    validation loss. Fully deterministic for a given config."""
    if dataset.seq_len != cfg.seq_len:
        raise ValueError(f"dataset L={dataset.seq_len} but config L={cfg.seq_len}")
    if dataset.n_train == 0 or dataset.n_validation == 0:
        raise ValueError("dataset must contain training and validation sequences")

    t_start = time.perf_counter()
    params = init_params(dataset.dim, cfg.hidden, substream(cfg.seed, "init"))
    adam = AdamState.zeros(dataset.dim, cfg.hidden)
    best = params.copy()
    best_val = np.inf
    best_epoch = 0
    train_losses, val_losses = [], []

    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, "batch", epoch).permutation(dataset.n_train)
        epoch_sq = 0.0
        for batch_no, start in enumerate(range(0, dataset.n_train, cfg.batch_size)):
            seqs = dataset.train[order[start:start + cfg.batch_size]]
            fp = _FastParams(params)
            ys, caches = _forward(fp, seqs[:, 0, :], cfg.seq_len)
            targets = seqs[:, 1:, :]
            loss = sequence_loss(ys, targets)
            if not np.isfinite(loss):
                raise TrainDivergedError(epoch, batch_no)
            dY = (2.0 / ys.size) * (ys - targets)
            grads = _backward(fp, caches, dY)
            params, adam = adam_step(params, grads, adam, cfg.learning_rate,
                                     cfg.beta1, cfg.beta2, cfg.eps)
            epoch_sq += loss * seqs.shape[0]
        train_losses.append(epoch_sq / dataset.n_train)
        val = evaluate_loss(dataset.validation, params, cfg.seq_len)
        val_losses.append(val)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best = params.copy()
        if progress is not None:
            progress(epoch, train_losses[-1], val)

    report = TrainReport(np.array(train_losses), np.array(val_losses),
                         best_epoch, time.perf_counter() - t_start)
    return best, report


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str, params: LstmParams, cfg: TrainConfig,
                    report: TrainReport | None = None,
                    extra_header: dict | None = None) -> None:
    header = {
        "kind": _CHECKPOINT_KIND,
        "version": _CHECKPOINT_VERSION,
        "dim": params.dim,
        "hidden": params.hidden,
        "seq_len": cfg.seq_len,
        "seed": cfg.seed,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "tensor_order": list(TENSOR_FIELDS),
        "best_epoch": report.best_epoch if report else None,
        "train_loss": list(map(float, report.train_loss)) if report else None,
        "val_loss": list(map(float, report.val_loss)) if report else None,
    }
    if extra_header:
        header.update(extra_header)
    payload = np.concatenate([arr.ravel() for _, arr in params.tensors()])
    arrayio.write_array_file(path, header, payload)


def load_checkpoint(path: str) -> tuple[LstmParams, dict]:
    header, payload = arrayio.read_array_file(path)
    if header.get("kind") != _CHECKPOINT_KIND:
        raise arrayio.HeaderError(f"{path}: not a checkpoint file")
    if header.get("version") != _CHECKPOINT_VERSION:
        raise arrayio.VersionError(f"{path}: unsupported version {header.get('version')}")
    try:
        dim = int(header["dim"])
        hidden = int(header["hidden"])
        int(header["seq_len"])
    except (KeyError, TypeError, ValueError) as exc:
        raise arrayio.HeaderError(f"{path}: incomplete header: {exc}") from None
    shapes = _tensor_shapes(dim, hidden)
    expected = sum(int(np.prod(s)) for s in shapes.values())
    arrayio.expect_payload(header, payload, expected, path)
    values = {}
    offset = 0
    for name in TENSOR_FIELDS:
        size = int(np.prod(shapes[name]))
        values[name] = payload[offset:offset + size].reshape(shapes[name]).copy()
        offset += size
    return LstmParams(**values), header
