"""
From-scratch LSTM: one input node, one LSTM hidden layer, a sigmoid output layer.

Training is truncated backpropagation through time with SGD + momentum, batch
size 1, state carried across windows within an epoch and reset between epochs.

Parameters for the four gates are stored stacked in the order
input, forget, output, candidate so that one matrix product serves all gates;
``LstmWeights.gate(name)`` returns the per-gate views.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from rich.console import Console

console = Console(stderr=True)

GATES = ("input", "forget", "output", "candidate")
PARAM_NAMES = ("W", "U", "b", "V", "c")
MAX_HORIZONS = 3
CHECKPOINT_FORMAT = "collectivelstm-checkpoint"


def sigmoid(z):
    # tanh form never overflows, unlike 1 / (1 + exp(-z))
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class LstmWeights:
    """
    All network parameters. Also used for gradients and momentum velocity.

    Shapes (H hidden units, L outputs):
        W: (4H,)    input weights, one per gate unit
        U: (4H, H)  recurrent weights
        b: (4H,)    gate biases
        V: (L, H)   output layer weights
        c: (L,)     output layer biases
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    V: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        arrays = {name: np.array(getattr(self, name), dtype=float) for name in PARAM_NAMES}
        hidden = arrays["U"].shape[1] if arrays["U"].ndim == 2 else 0
        horizons = arrays["V"].shape[0] if arrays["V"].ndim == 2 else 0
        if hidden < 1:
            raise ValueError("hidden size must be at least 1")
        if not 1 <= horizons <= MAX_HORIZONS:
            raise ValueError(f"number of outputs must be in [1, {MAX_HORIZONS}], got {horizons}")
        expected = {
            "W": (4 * hidden,),
            "U": (4 * hidden, hidden),
            "b": (4 * hidden,),
            "V": (horizons, hidden),
            "c": (horizons,),
        }
        for name, array in arrays.items():
            if array.shape != expected[name]:
                raise ValueError(f"parameter {name} has shape {array.shape}, expected {expected[name]}")
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def horizons(self) -> int:
        return self.V.shape[0]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(W_g, U_g, b_g) for one of input, forget, output, candidate."""
        k = GATES.index(name)
        rows = slice(k * self.hidden_size, (k + 1) * self.hidden_size)
        return self.W[rows], self.U[rows], self.b[rows]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())

    def zeros_like(self) -> "LstmWeights":
        return LstmWeights(**{name: np.zeros_like(a) for name, a in self.arrays().items()})


# Same shape as the weights; zero-initialised momentum accumulator.
Velocity = LstmWeights


@dataclass(frozen=True)
class LstmState:
    """Recurrent state (h, c)."""

    h: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class StepCache:
    """Activations of one forward step, kept for backprop."""

    x: float
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray
    y: np.ndarray


@dataclass
class TrainConfig:
    """Training hyperparameters."""

    hidden_size: int = 10
    horizons: int = 1
    learning_rate: float = 1e-4
    epochs: int = 100
    momentum: float = 0.5
    batch_size: int = 1
    bptt_window: int = 16
    seed: int = 0
    init_scale: float = 0.1
    clip_value: float = 5.0

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if not 1 <= self.horizons <= MAX_HORIZONS:
            raise ValueError(f"horizons must be in [1, {MAX_HORIZONS}], got {self.horizons}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.bptt_window < 1:
            raise ValueError(f"bptt_window must be >= 1, got {self.bptt_window}")
        if self.batch_size != 1:
            raise ValueError(f"only batch_size 1 is supported, got {self.batch_size}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if not self.init_scale > 0:
            raise ValueError(f"init_scale must be > 0, got {self.init_scale}")
        if not self.clip_value > 0:
            raise ValueError(f"clip_value must be > 0, got {self.clip_value}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    weights: LstmWeights
    loss_curve: list[float]
    valid_loss_curve: list[float] = field(default_factory=list)


def init_weights(
    hidden_size: int, horizons: int, init_scale: float, rng: np.random.Generator
) -> LstmWeights:
    """Uniform [-init_scale, init_scale] for every parameter, drawn in W, U, b, V, c order."""
    h = hidden_size
    return LstmWeights(
        W=rng.uniform(-init_scale, init_scale, size=4 * h),
        U=rng.uniform(-init_scale, init_scale, size=(4 * h, h)),
        b=rng.uniform(-init_scale, init_scale, size=4 * h),
        V=rng.uniform(-init_scale, init_scale, size=(horizons, h)),
        c=rng.uniform(-init_scale, init_scale, size=horizons),
    )


def zero_state(hidden_size: int) -> LstmState:
    return LstmState(h=np.zeros(hidden_size), c=np.zeros(hidden_size))


def zero_velocity(weights: LstmWeights) -> Velocity:
    return weights.zeros_like()


def forward_step(weights: LstmWeights, state: LstmState, x: float) -> tuple[LstmState, np.ndarray, StepCache]:
    """
    One step of the vanilla three-gate LSTM followed by the sigmoid output layer.

    Returns:
        (new state, L outputs in (0, 1), cache for backprop)
    """
    hs = weights.hidden_size
    z = weights.W * x + weights.U @ state.h + weights.b
    i = sigmoid(z[:hs])
    f = sigmoid(z[hs : 2 * hs])
    o = sigmoid(z[2 * hs : 3 * hs])
    g = np.tanh(z[3 * hs :])

    c = f * state.c + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    y = sigmoid(weights.V @ h + weights.c)

    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(y))):
        raise FloatingPointError("numeric overflow in forward pass")

    cache = StepCache(x=x, h_prev=state.h, c_prev=state.c, i=i, f=f, o=o, g=g, c=c, tanh_c=tanh_c, h=h, y=y)
    return LstmState(h=h, c=c), y, cache


def mse_loss(y, target) -> float:
    """(1/L) * sum (y_k - t_k)^2"""
    y = np.asarray(y, dtype=float)
    target = np.asarray(target, dtype=float)
    if y.shape != target.shape:
        raise ValueError(f"output and target lengths differ: {y.shape} vs {target.shape}")
    return float(np.mean((y - target) ** 2))


def bptt_gradients(
    weights: LstmWeights,
    window: list[tuple[float, np.ndarray]],
    initial_state: LstmState,
) -> tuple[LstmWeights, LstmState, float]:
    """
    Gradients of the summed MSE over a window, by reverse accumulation.

    The final state is returned detached: no gradient flows out of the window.

    Args:
        weights: Current parameters
        window: (x, target vector) pairs in time order
        initial_state: State entering the window

    Returns:
        (gradients shaped like the weights, state after the window, mean loss per step)
    """
    if not window:
        raise ValueError("window must contain at least one step")

    hs = weights.hidden_size
    n_out = weights.horizons

    caches = []
    targets = []
    total_loss = 0.0
    state = initial_state
    for x, target in window:
        target = np.asarray(target, dtype=float)
        state, y, cache = forward_step(weights, state, float(x))
        total_loss += mse_loss(y, target)
        caches.append(cache)
        targets.append(target)

    dW = np.zeros(4 * hs)
    dU = np.zeros((4 * hs, hs))
    db = np.zeros(4 * hs)
    dV = np.zeros((n_out, hs))
    dc_out = np.zeros(n_out)
    dh_next = np.zeros(hs)
    dc_next = np.zeros(hs)
    dz = np.empty(4 * hs)

    for cache, target in zip(reversed(caches), reversed(targets)):
        dy = 2.0 * (cache.y - target) / n_out
        dzy = dy * cache.y * (1.0 - cache.y)
        dV += np.outer(dzy, cache.h)
        dc_out += dzy

        dh = weights.V.T @ dzy + dh_next
        dcell = dh * cache.o * (1.0 - cache.tanh_c**2) + dc_next

        dz[:hs] = dcell * cache.g * cache.i * (1.0 - cache.i)
        dz[hs : 2 * hs] = dcell * cache.c_prev * cache.f * (1.0 - cache.f)
        dz[2 * hs : 3 * hs] = dh * cache.tanh_c * cache.o * (1.0 - cache.o)
        dz[3 * hs :] = dcell * cache.i * (1.0 - cache.g**2)

        dW += dz * cache.x
        dU += np.outer(dz, cache.h_prev)
        db += dz

        dh_next = weights.U.T @ dz
        dc_next = dcell * cache.f

    gradients = (dW, dU, db, dV, dc_out)
    if not all(np.all(np.isfinite(g)) for g in gradients):
        raise FloatingPointError("numeric overflow in backward pass")

    final_state = LstmState(h=state.h.copy(), c=state.c.copy())
    return LstmWeights(*gradients), final_state, total_loss / len(window)


def clip_gradients(gradients: LstmWeights, bound: float) -> tuple[LstmWeights, bool]:
    """Element-wise clip to [-bound, bound]; untouched when nothing exceeds the bound."""
    if all(np.max(np.abs(a)) <= bound for a in gradients.arrays().values()):
        return gradients, False
    clipped = {name: np.clip(a, -bound, bound) for name, a in gradients.arrays().items()}
    return LstmWeights(**clipped), True


def sgd_momentum_update(
    weights: LstmWeights,
    velocity: Velocity,
    gradients: LstmWeights,
    learning_rate: float,
    momentum: float,
) -> tuple[LstmWeights, Velocity]:
    """velocity' = momentum * velocity - lr * grad; weights' = weights + velocity'"""
    new_velocity = {}
    new_weights = {}
    for name in PARAM_NAMES:
        v = momentum * getattr(velocity, name) - learning_rate * getattr(gradients, name)
        new_velocity[name] = v
        new_weights[name] = getattr(weights, name) + v
    return LstmWeights(**new_weights), LstmWeights(**new_velocity)


def train(
    series,
    config: TrainConfig,
    valid_series=None,
    quiet: bool = False,
    log_every: int = 10,
) -> TrainResult:
    """
    Train on a (normal-only) scaled series.

    Each epoch walks the series in order from the zero state, carrying state
    across BPTT windows, with one momentum update per window.

    Args:
        series: TimeSeries to train on
        config: Hyperparameters
        valid_series: Optional TimeSeries; its epoch loss is recorded alongside
        quiet: Suppress progress output
        log_every: Print a progress line every N epochs

    Returns:
        TrainResult with final weights and the epoch-mean loss curve(s)
    """
    # predictor imports this module for inference
    from collectivelstm.predictor import make_training_pairs

    if len(series.values) <= config.horizons + 1:
        raise ValueError(
            f"series of length {len(series.values)} is too short for {config.horizons}-step training"
        )

    pairs = make_training_pairs(series, config.horizons)
    valid_pairs = None
    if valid_series is not None:
        if len(valid_series.values) > config.horizons:
            valid_pairs = make_training_pairs(valid_series, config.horizons)
        elif not quiet:
            console.print("[yellow]Validation series too short; skipping validation loss[/yellow]")

    rng = np.random.default_rng(config.seed)
    weights = init_weights(config.hidden_size, config.horizons, config.init_scale, rng)
    velocity = zero_velocity(weights)

    loss_curve = []
    valid_curve = []
    for epoch in range(1, config.epochs + 1):
        state = zero_state(config.hidden_size)
        epoch_loss = 0.0
        clipped_windows = 0

        for start in range(0, len(pairs), config.bptt_window):
            window = pairs[start : start + config.bptt_window]
            gradients, state, window_loss = bptt_gradients(weights, window, state)
            gradients, clipped = clip_gradients(gradients, config.clip_value)
            clipped_windows += clipped
            weights, velocity = sgd_momentum_update(
                weights, velocity, gradients, config.learning_rate, config.momentum
            )
            if not weights.is_finite():
                raise FloatingPointError("training diverged")
            epoch_loss += window_loss * len(window)

        epoch_loss /= len(pairs)
        if not np.isfinite(epoch_loss):
            raise FloatingPointError("training diverged")
        loss_curve.append(epoch_loss)

        if valid_pairs:
            valid_curve.append(evaluate_loss(weights, valid_pairs))

        if not quiet:
            if clipped_windows:
                console.print(
                    f"[yellow]Epoch {epoch}: clipped gradients in {clipped_windows} window(s)[/yellow]"
                )
            if epoch == 1 or epoch % log_every == 0 or epoch == config.epochs:
                line = f"  epoch {epoch:>4}/{config.epochs}  loss {epoch_loss:.6f}"
                if valid_curve:
                    line += f"  valid {valid_curve[-1]:.6f}"
                console.print(line)

    return TrainResult(weights=weights, loss_curve=loss_curve, valid_loss_curve=valid_curve)


def evaluate_loss(weights: LstmWeights, pairs: list[tuple[float, np.ndarray]]) -> float:
    """Mean per-step MSE of a stateful pass from the zero state."""
    state = zero_state(weights.hidden_size)
    total = 0.0
    for x, target in pairs:
        state, y, _ = forward_step(weights, state, float(x))
        total += mse_loss(y, target)
    return total / len(pairs)


# --- checkpoints -------------------------------------------------------------


def checkpoint_to_json(weights: LstmWeights, config: TrainConfig) -> str:
    """
    Self-describing JSON checkpoint.

    Floats are written with Python's shortest round-trip repr, so loading
    reproduces every parameter bit for bit.
    """
    params = {}
    for gate in GATES:
        w, u, b = weights.gate(gate)
        params[f"W_{gate}"] = w.tolist()
        params[f"U_{gate}"] = u.tolist()
        params[f"b_{gate}"] = b.tolist()
    params["V"] = weights.V.tolist()
    params["c"] = weights.c.tolist()

    document = {
        "format": CHECKPOINT_FORMAT,
        "hidden_size": weights.hidden_size,
        "horizons": weights.horizons,
        "seed": config.seed,
        "config": config.to_dict(),
        "gate_order": list(GATES),
        "params": params,
    }
    return json.dumps(document, indent=2) + "\n"


def checkpoint_from_json(text: str) -> tuple[LstmWeights, TrainConfig]:
    """Inverse of checkpoint_to_json."""
    document = json.loads(text)
    if document.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a collectivelstm checkpoint")

    params = document["params"]
    weights = LstmWeights(
        W=np.concatenate([params[f"W_{gate}"] for gate in GATES]),
        U=np.vstack([params[f"U_{gate}"] for gate in GATES]),
        b=np.concatenate([params[f"b_{gate}"] for gate in GATES]),
        V=np.array(params["V"], dtype=float),
        c=np.array(params["c"], dtype=float),
    )
    if weights.hidden_size != document["hidden_size"] or weights.horizons != document["horizons"]:
        raise ValueError("checkpoint header does not match its parameter shapes")
    return weights, TrainConfig(**document["config"])
