import numpy as np
import pytest

from divmotion.generator import MotionGenerator, PartitionSpec
from divmotion.kinematics import AngleSpec, mine_ranges
from divmotion.prior import init_flow
from divmotion.skeleton import Skeleton
from divmotion.synth import default_skeleton, synth_generate


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture(scope="session")
def walkers():
    return synth_generate(3, 6, 120)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# toy 4-joint rig: root -> a -> b, root -> c
TOY_SKELETON = Skeleton(("root", "a", "b", "c"), (-1, 0, 1, 0))
TOY_OFFSETS = np.array([[0, 0, 0], [0.3, 0.1, 0.0], [0.6, 0.4, 0.1], [-0.2, 0.4, 0.2]], dtype=float)


def toy_pose_sequence(rng, n):
    base = TOY_OFFSETS.reshape(1, -1)
    seq = base + 0.05 * rng.standard_normal((n, 12))
    seq[:, :3] = 0.0
    return seq


@pytest.fixture
def toy():
    """Tiny 2-part model (root+a | b+c) with a prior and mined angle table."""
    rng = np.random.default_rng(7)
    sk = TOY_SKELETON
    part = PartitionSpec(((0, 1), (2, 3)), ("first", "second"))
    gen = MotionGenerator(sk, part, H=3, T=4, M=4, hidden=5, latent_dim=3, n_blocks=1, seed=3)
    for p in gen.parameters():
        p.data = p.data + 0.3 * rng.standard_normal(p.shape)
    specs = [AngleSpec("ab_c", ("limb", ("a", "b")), ("limb", ("root", "c"))),
             AngleSpec("plane_c", ("plane", ("root", "a", "b")), ("limb", ("root", "c")))]
    table = mine_ranges(toy_pose_sequence(rng, 40), specs, sk)
    prior = init_flow(9, seed=5)
    for p in prior.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    past = toy_pose_sequence(rng, 2 * 3).reshape(2, 3, 12)
    fut = toy_pose_sequence(rng, 2 * 4).reshape(2, 4, 12)
    return dict(skeleton=sk, gen=gen, table=table, prior=prior, past=past, future=fut, rng=rng)


def multi_grad_check(fn, params, step=1e-5):
    """grad_check for every entry of a dict-valued loss function, sharing the perturbed evaluations.

    Returns {name: max relative error}; per tensor the error is
    max|analytic - numeric| / max(1e-8, max|numeric|).
    """
    from divmotion import autodiff as ad
    params = list(params)
    names = list(fn())
    analytic = {}
    for name in names:
        for p in params:
            p.grad = np.zeros_like(p.data)
        ad.backward(fn()[name])
        analytic[name] = [p.grad.copy() for p in params]
    worst = dict.fromkeys(names, 0.0)
    for k, p in enumerate(params):
        flat = p.data.reshape(-1)
        num = {n: np.empty(flat.size) for n in names}
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = {n: float(v.data) for n, v in fn().items()}
            flat[i] = orig - step
            fm = {n: float(v.data) for n, v in fn().items()}
            flat[i] = orig
            for n in names:
                num[n][i] = (fp[n] - fm[n]) / (2.0 * step)
        for n in names:
            err = np.max(np.abs(analytic[n][k].reshape(-1) - num[n])) / max(1e-8, np.max(np.abs(num[n])))
            worst[n] = max(worst[n], float(err))
    for p in params:
        p.zero_grad()
    return worst


# acceptance criterion -> (title, passed, seconds); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, ok, secs = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n} {title}: {'PASS' if ok else 'FAIL'} ({secs:.2f} s)")
