import numpy as np
import pytest

from mimbfd import autodiff as ad
from mimbfd.graph import MultiRelationGraph, RelationAdjacency, stratified_split
from mimbfd.synth import SynthSpec, generate

FD_STEP = 1e-6


def numeric_grad(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar function f at x (x is perturbed in place, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        hi = f()
        x[i] = old - step
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * step)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Largest entrywise gap, relative to the largest gradient magnitude."""
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_grads(build, params: list[ad.Tensor]) -> float:
    """Worst relative error between backward() and finite differences over params.

    ``build`` must construct a fresh scalar loss from the current param data.
    """
    for p in params:
        p.grad = None
    loss = build()
    ad.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_grad(lambda: build().item(), p.data)
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def random_graph(n: int, num_relations: int, rng: np.random.Generator, p_edge: float = 0.1,
                 feature_dim: int = 3, labeled: float = 1.0) -> MultiRelationGraph:
    rels = []
    for _ in range(num_relations):
        a = np.triu(rng.random((n, n)) < p_edge, 1)
        src, dst = np.nonzero(a)
        rels.append(RelationAdjacency.from_edges(src, dst, n))
    labels = (rng.random(n) < 0.3).astype(np.int64)
    labels[0], labels[1] = 0, 1
    labels[2:][rng.random(n - 2) > labeled] = -1
    return MultiRelationGraph(rng.standard_normal((n, feature_dim)), tuple(rels), labels,
                              tuple(f"r{i}" for i in range(num_relations)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_graph():
    # 0-1, 0-2, 1-2, 2-3 in relation a; 0-3 in relation b; node 4 isolated
    a = RelationAdjacency.from_edges([0, 0, 1, 2], [1, 2, 2, 3], 5)
    b = RelationAdjacency.from_edges([0], [3], 5)
    feats = np.arange(10, dtype=float).reshape(5, 2)
    labels = np.array([0, 1, 0, 1, -1])
    return MultiRelationGraph(feats, (a, b), labels, ("a", "b"))


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthSpec(n=300, seed=3, feature_dim=8))


@pytest.fixture(scope="session")
def small_split(small_synth):
    return stratified_split(small_synth, (0.4, 0.2, 0.4), 3)


def planted_design(n: int = 512, p: int = 8, rho: float = 0.9, scale: float = 5.0, seed: int = 0) -> np.ndarray:
    """n x p Gaussian design whose columns 0 and 1 have sample correlation exactly ``rho``."""
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, p))
    a = Z[:, 0] - Z[:, 0].mean()
    a /= a.std()
    b = Z[:, 1] - Z[:, 1].mean()
    b -= (a @ b) / (a @ a) * a
    b /= b.std()
    Z[:, 0] = a
    Z[:, 1] = rho * a + np.sqrt(1 - rho**2) * b
    return scale * Z


def optimize_weights(H: np.ndarray, steps: int = 2000, lr: float = 0.1, lambda1: float = 0.1,
                     lambda2: float = 1.0, variant: str = "sq_outside"):
    """Adam on u alone with H frozen; returns the final LcdState."""
    from mimbfd.lcd import LcdState, lcd_loss, step_weights

    state = LcdState.create(H.shape[0], H.shape[1], lambda1, lambda2, variant=variant, lr=lr)
    Ht = ad.Tensor(H)
    for _ in range(steps):
        state.u.grad = None
        ad.backward(lcd_loss(Ht, state))
        step_weights(state, state.u.grad)
    return state


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str):
        store[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(store[number])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for k in sorted(store):
            terminalreporter.write_line(store[k])
