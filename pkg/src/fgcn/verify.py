"""Self-contained verification suites runnable from the command line.

Each suite checks a family of properties against an independent reference:
finite differences for gradients, hand-computed matrices for the graph
normalization, brute-force counting for sampling statistics, algebraic
identities for fusion, and joint-relabeling runs for equivariance. Suites
return per-property results; the CLI prints one pass/fail line each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .gradcheck import check_gradients
from .graph import (adjacency, named_topology, normalized_subsets,
                    partition_subsets, permute_vertex_axis, permuted_topology)
from .model import FeedbackGCN, ModelConfig, fuse, fusion_spec
from .sampling import plan_stage, plan_stages
from .training import cross_entropy


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


def _check(name, ok, detail=""):
    return Check(name, bool(ok), detail)


# ---------------------------------------------------------------------------
# toy models shared by the gradient and equivariance suites


def tiny_model_config(topology, classes=2, stages=2, clip_len=4, stream="spatial",
                      seed=0):
    """A three-layer configuration small enough for exhaustive checking."""
    return ModelConfig(
        topology=topology,
        stream=stream,
        classes=classes,
        stages=stages,
        clip_len=clip_len,
        channels=(4, 4, 8),
        strides=(1, 2, 2),
        kernel_t=3,
        fgcb_layers=2,
        fgcb_kernel_t=3,
        seed=seed,
    )


def random_clips(config, batch, bodies, rng):
    shape = (config.stages, batch, bodies, config.clip_len,
             config.topology.num_vertices, config.in_channels)
    return rng.normal(0.0, 1.0, size=shape)


def warm_up_norm_stats(model, spec, clips, passes=30):
    """Pull running normalization statistics toward realistic activation scales.

    A freshly built model has identity running statistics; its eval-mode
    activations then blow up through the epsilon-regularized adjacency and
    saturate the softmax, which would make eval-mode property checks
    vacuous. A few train-mode passes fix that.
    """
    for _ in range(passes):
        model.forward_clips(clips, spec, train=True)


# ---------------------------------------------------------------------------
# gradient suite


def _op_cases(rng):
    """(name, params, loss_fn) triples covering every differentiable operation."""
    def p(shape, low=0.2, high=1.0):
        signs = rng.choice((-1.0, 1.0), size=shape)
        return T.parameter(signs * rng.uniform(low, high, size=shape), f"p{shape}")

    cases = []

    a, b = p((3, 4)), p((4,))
    cases.append(("add.broadcast", [a, b], lambda: T.mean_all(T.add(a, b))))

    c, d = p((2, 3)), p((2, 3))
    cases.append(("mul", [c, d], lambda: T.mean_all(T.mul(c, d))))

    e = p((3, 3))
    cases.append(("scale.neg", [e], lambda: T.mean_all(T.neg(T.scale(e, 1.7)))))

    f, g = p((2, 3, 4)), p((4, 5))
    cases.append(("matmul.batched", [f, g], lambda: T.mean_all(T.matmul(f, g))))

    h = p((2, 3, 4))
    cases.append(("transpose", [h], lambda: T.mean_all(T.transpose(h, (2, 0, 1)))))
    cases.append(("reshape", [h], lambda: T.mean_all(T.reshape(h, (6, 4)))))

    i, j = p((2, 3, 4, 5)), p((2, 2, 4, 5))
    cases.append(("concat_channels", [i, j],
                  lambda: T.mean_all(T.concat_channels([i, j]))))

    k = p((3, 4))
    cases.append(("relu", [k], lambda: T.mean_all(T.relu(k))))

    m = p((2, 3, 4))
    cases.append(("sum_axes", [m], lambda: T.mean_all(T.sum_axes(m, (0, 2)))))
    cases.append(("mean_axes", [m], lambda: T.mean_all(T.mean_axes(m, (1,)))))

    n = p((2, 3, 4, 5))
    cases.append(("global_average_pool", [n],
                  lambda: T.mean_all(T.global_average_pool(n))))

    x1, w1 = p((2, 3, 6, 2)), p((4, 3, 3))
    cases.append(("temporal_conv.s1", [x1, w1],
                  lambda: T.mean_all(T.temporal_conv(x1, w1, 1))))
    cases.append(("temporal_conv.s2", [x1, w1],
                  lambda: T.mean_all(T.temporal_conv(x1, w1, 2))))

    xn = p((3, 2, 4, 3))
    gam = T.parameter(rng.uniform(0.5, 1.5, size=2), "gamma")
    bet = T.parameter(rng.uniform(-0.5, 0.5, size=2), "beta")

    def norm_train_loss():
        rm, rv = np.zeros(2), np.ones(2)
        return T.mean_all(T.relu(T.channel_norm(xn, gam, bet, rm, rv, True)))

    cases.append(("channel_norm.train", [xn, gam, bet], norm_train_loss))

    frozen_mean = rng.normal(0.0, 0.3, size=2)
    frozen_var = rng.uniform(0.5, 1.5, size=2)

    def norm_eval_loss():
        return T.mean_all(T.relu(T.channel_norm(
            xn, gam, bet, frozen_mean.copy(), frozen_var.copy(), False)))

    cases.append(("channel_norm.eval", [xn, gam, bet], norm_eval_loss))

    q = p((4, 3))
    q_mix = T.constant(rng.normal(size=(4, 3)))
    cases.append(("softmax", [q], lambda: T.mean_all(T.mul(T.softmax(q), q_mix))))

    r = T.parameter(rng.uniform(0.5, 2.0, size=(3, 4)), "rpos")
    cases.append(("log_clamped", [r], lambda: T.mean_all(T.log_clamped(r))))

    s = p((4, 5))
    idx = rng.integers(0, 5, size=4)
    cases.append(("gather_rows", [s], lambda: T.mean_all(T.gather_rows(s, idx))))

    t1 = p((3, 6))
    labels = rng.integers(0, 6, size=3)
    cases.append(("softmax.cross_entropy", [t1],
                  lambda: cross_entropy(T.softmax(t1), labels)))

    return cases


def suite_gradcheck(max_entries_per_param=6):
    checks = []
    rng = np.random.default_rng(20240811)
    for name, params, loss_fn in _op_cases(rng):
        report = check_gradients(loss_fn, params)
        checks.append(_check(f"gradcheck.{name}", report.ok,
                             f"checked={report.checked} worst={report.worst_abs:.3g}"))

    config = tiny_model_config(named_topology("path3"))
    model = FeedbackGCN(config)
    spec = fusion_spec("average", config.stages)
    clips = random_clips(config, batch=2, bodies=1, rng=rng)
    labels = rng.integers(0, config.classes, size=2)

    def model_loss():
        prediction = model.forward_clips(clips, spec, train=True)
        return cross_entropy(prediction.fused, labels)

    report = check_gradients(model_loss, model.params(),
                             max_entries_per_param=max_entries_per_param,
                             rng=np.random.default_rng(7))
    checks.append(_check("gradcheck.model", report.ok,
                         f"checked={report.checked} worst={report.worst_abs:.3g}"))
    return checks


# ---------------------------------------------------------------------------
# topology suite


def _path3_hand_matrices():
    """Normalized subsets of the 3-vertex path, worked out by hand.

    Vertices 0-1-2, center 1, hop distances (1, 0, 1). Row sums of the
    subset matrices give degrees (d + 1e-3), and each nonzero entry (i, j)
    becomes 1/sqrt(d_i d_j).
    """
    root = np.diag([1.0 / 1.001] * 3)
    cp = np.zeros((3, 3))
    cp[0, 1] = cp[2, 1] = 1.0 / math.sqrt(1.001 * 0.001)
    cf = np.zeros((3, 3))
    cf[1, 0] = cf[1, 2] = 1.0 / math.sqrt(2.001 * 0.001)
    return root, cp, cf


def _star5_hand_matrices():
    """Normalized subsets of the 5-vertex star with the hub as center."""
    root = np.diag([1.0 / 1.001] * 5)
    cp = np.zeros((5, 5))
    for leaf in range(1, 5):
        cp[leaf, 0] = 1.0 / math.sqrt(1.001 * 0.001)
    cf = np.zeros((5, 5))
    for leaf in range(1, 5):
        cf[0, leaf] = 1.0 / math.sqrt(4.001 * 0.001)
    return root, cp, cf


def suite_topology():
    checks = []
    for name, hand in (("path3", _path3_hand_matrices()),
                       ("star5", _star5_hand_matrices())):
        topo = named_topology(name)
        computed = normalized_subsets(topo)
        worst = max(float(np.abs(computed[k] - hand[k]).max()) for k in range(3))
        checks.append(_check(f"topology.normalized.{name}", worst <= 1e-12,
                             f"worst={worst:.3g}"))
    for name in ("path3", "star5", "toy9", "ucla20", "ntu25"):
        topo = named_topology(name)
        subsets = partition_subsets(topo)
        total = subsets.sum(axis=0)
        expected = adjacency(topo) + np.eye(topo.num_vertices)
        checks.append(_check(f"topology.completeness.{name}",
                             np.array_equal(total, expected)))
        checks.append(_check(f"topology.duality.{name}",
                             np.array_equal(subsets[1], subsets[2].T)))
    return checks


# ---------------------------------------------------------------------------
# equivariance suite


def suite_equivariance(permutations=20, tol=1e-10):
    rng = np.random.default_rng(99)
    topo = named_topology("toy9")
    config = tiny_model_config(topo, classes=3, stream="spatial")
    model = FeedbackGCN(config)
    spec = fusion_spec("average", config.stages)
    clips = random_clips(config, batch=2, bodies=2, rng=rng)
    warm_up_norm_stats(model, spec, clips)
    base = model.forward_clips(clips, spec)
    base_stages = base.stage_arrays()
    if float(np.max(base_stages[0])) > 1.0 - 1e-9:
        return [_check("equivariance.stage_probs", False,
                       "saturated probabilities make the check vacuous")]

    worst = 0.0
    for _ in range(permutations):
        perm = rng.permutation(topo.num_vertices)
        other = FeedbackGCN(tiny_model_config(
            permuted_topology(topo, perm), classes=3, stream="spatial"))
        other.load_state(model.state_arrays())
        permuted_clips = permute_vertex_axis(clips, perm, axis=4)
        out = other.forward_clips(permuted_clips, spec)
        for t, probs in enumerate(out.stage_arrays()):
            worst = max(worst, float(np.abs(probs - base_stages[t]).max()))
    return [_check("equivariance.stage_probs", worst <= tol,
                   f"permutations={permutations} worst={worst:.3g}")]


# ---------------------------------------------------------------------------
# fusion suite


def suite_fusion(random_sets=1000):
    checks = []
    expected_vectors = {
        "last-win-all": (0.0, 0.0, 0.0, 0.0, 1.0),
        "weight-fusion-1": (0.05, 0.05, 0.1, 0.2, 0.6),
        "weight-fusion-2": (0.1, 0.15, 0.2, 0.25, 0.3),
        "average": (0.2, 0.2, 0.2, 0.2, 0.2),
    }
    exact = all(fusion_spec(name, 5).weights == vec
                for name, vec in expected_vectors.items())
    checks.append(_check("fusion.weight_vectors", exact))

    rng = np.random.default_rng(5)
    probs = rng.dirichlet(np.ones(4), size=3)
    one = T.constant(probs)
    for name in expected_vectors:
        fused = fuse([one] * 5, fusion_spec(name, 5)).data
        if float(np.abs(fused - probs).max()) > 1e-12:
            checks.append(_check(f"fusion.fixed_point.{name}", False))
            break
    else:
        checks.append(_check("fusion.fixed_point", True))

    stages = [T.constant(rng.dirichlet(np.ones(4), size=3)) for _ in range(5)]
    fused = fuse(stages, fusion_spec("last-win-all", 5)).data
    checks.append(_check("fusion.last_win_all",
                         np.array_equal(fused, stages[-1].data)))

    worst = 0.0
    for _ in range(random_sets):
        draws = rng.dirichlet(np.ones(6), size=5)
        weights = rng.dirichlet(np.ones(5))
        spec = fusion_spec("custom", 5, weights / weights.sum())
        fused = fuse([T.constant(d) for d in draws], spec).data
        low = draws.min(axis=0) - fused
        high = fused - draws.max(axis=0)
        worst = max(worst, float(low.max()), float(high.max()))
    checks.append(_check("fusion.convexity", worst <= 1e-12,
                         f"sets={random_sets} worst={worst:.3g}"))
    return checks


# ---------------------------------------------------------------------------
# sampling suite


def suite_sampling(draws=10000, sigma=5.0):
    checks = []
    plans = plan_stages(320, 5, 64, "center")
    offsets = [p.offset for p in plans]
    checks.append(_check("sampling.exact_fit", offsets == [0, 64, 128, 192, 256],
                         f"offsets={offsets}"))

    one = plan_stages(1, 5, 8, "center")
    degenerate = all(p.frames == (0,) * 8 for p in one)
    checks.append(_check("sampling.degenerate_len1", degenerate))

    seq_len, stages, clip_len = 100, 5, 10
    rng = np.random.default_rng(123)
    counts = [{} for _ in range(stages)]
    for _ in range(draws):
        for s in range(stages):
            plan = plan_stage(seq_len, stages, clip_len, s, "random", rng)
            counts[s][plan.offset] = counts[s].get(plan.offset, 0) + 1
    ok = True
    detail = ""
    for s in range(stages):
        start = (s * seq_len) // stages
        length = ((s + 1) * seq_len) // stages - start
        valid = list(range(start, start + length - clip_len + 1))
        prob = 1.0 / len(valid)
        bound = sigma * math.sqrt(draws * prob * (1.0 - prob))
        for offset in valid:
            dev = abs(counts[s].get(offset, 0) - draws * prob)
            if dev > bound:
                ok = False
                detail = f"stage {s} offset {offset} deviates {dev:.1f} > {bound:.1f}"
        if set(counts[s]) - set(valid):
            ok = False
            detail = f"stage {s} drew invalid offsets {sorted(set(counts[s]) - set(valid))}"
    checks.append(_check("sampling.uniformity", ok, detail or f"draws={draws}"))
    return checks


SUITES = {
    "gradcheck": suite_gradcheck,
    "topology": suite_topology,
    "equivariance": suite_equivariance,
    "fusion": suite_fusion,
    "sampling": suite_sampling,
}


def run_suites(names):
    """Run the selected suites; returns a list of (suite, Check)."""
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError(
            f"unknown verification suite(s) {unknown}, expected {sorted(SUITES)}")
    results = []
    for name in names:
        for check in SUITES[name]():
            results.append((name, check))
    return results
