"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria 1-3 are fast algebraic/oracle checks.  Criteria 4-9 are desk-scale
experiments on the built-in systems; they share one trained model set per
environment, cached on disk under .cache/acceptance keyed by config hash so
repeated runs are cheap.  Run only the fast part with:

    pytest tests/test_acceptance.py -m "not slow"
"""
import hashlib
import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from offmpc import dataset as ds
from offmpc import nets, pipeline, runconfig
from offmpc.envs import CARTPOLE_SPEC, make_env
from offmpc.evaluate import evaluate_policy
from offmpc.nets import (
    AdamState,
    EnsembleNet,
    MlpParams,
    NormStats,
    TrainConfig,
    adam_step,
    backward,
    init_mlp,
    mlp_apply,
    train_ensemble,
)
from offmpc.planner import (
    ObjectiveSpec,
    PlannerConfig,
    PolicyModels,
    RolloutBatch,
    initial_plan,
    reweight,
    rollout_batch,
    sample_trajectory,
    trajopt,
)

CACHE = Path(__file__).resolve().parent.parent / ".cache" / "acceptance"

# strength of the cart-position penalty in the constrained study
CONSTRAINT_KAPPA_OBJ = 2.0

# recorded repo baseline for the cartpole one-step dynamics ensemble:
# normalized validation MSE observed ~0.001-0.003 across members on the
# 25k-step study dataset; anything past 0.01 signals a training regression
MODEL_VAL_MSE_BASELINE = 0.01


def _announce(criterion: str, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS - {detail}")


def _identity_norm(i, o):
    return NormStats(np.zeros(i), np.ones(i), np.zeros(o), np.ones(o))


def _random_models(k=3, seed=0):
    def ens(i, o, role, s):
        members = [init_mlp(i, o, hidden=(16,), seed=s + j) for j in range(k)]
        return EnsembleNet(members, _identity_norm(i, o), role)

    return PolicyModels(
        dynamics=ens(6, 6, "model", seed),
        prior=ens(6, 1, "bc", seed + 50),
        value=ens(6, 1, "value", seed + 90),
        env_spec=CARTPOLE_SPEC,
    )


# --- criterion 1: algorithm identities --------------------------------------


def test_criterion_1_algorithm_identities():
    t0 = time.time()
    rng = np.random.default_rng(0)
    models = _random_models()
    obs = np.array([0.1, -0.9, 0.4, 0.0, 0.2])

    # kappa = 0 -> uniform average of the sampled matrices (shifted)
    cfg = PlannerConfig(horizon=6, n_samples=10, sigma=0.5, beta=0.2, kappa=0.0, seed=3)
    prev = rng.uniform(-0.5, 0.5, (6, 1))
    batch = rollout_batch(obs, prev, models, cfg)
    mean = batch.actions.mean(axis=0)
    assert np.allclose(
        reweight(batch, 0.0), np.vstack([mean[1:], mean[-1:]]), atol=1e-12
    )

    # kappa = 1e6 -> argmax trajectory (shifted), within 1e-6
    best = batch.actions[batch.returns.argmax()]
    assert np.abs(
        reweight(batch, 1e6) - np.vstack([best[1:], best[-1:]])
    ).max() <= 1e-6

    # return shift invariance, within 1e-10
    shifted = RolloutBatch(batch.actions, batch.returns + 77.7, batch.secondary, batch.valid)
    assert np.abs(reweight(batch, 1.3) - reweight(shifted, 1.3)).max() <= 1e-10

    # beta = 1 -> previous plan shifted by one, last action repeated
    cfg_b = PlannerConfig(horizon=6, n_samples=10, sigma=0.9, beta=1.0, kappa=1.0, seed=3)
    plan = trajopt(obs, prev, models, cfg_b)
    assert np.allclose(plan, np.vstack([prev[1:], prev[-1:]]), atol=1e-10)

    # sigma=0, beta=0, K=1 -> deterministic rollout of the cloned prior
    m1 = _random_models(k=1, seed=7)
    cfg_d = PlannerConfig(horizon=5, n_samples=4, sigma=0.0, beta=0.0, kappa=1.0, seed=0)
    plan = trajopt(obs, np.zeros((5, 1)), m1, cfg_d)
    s = obs.copy()
    a_prev = np.zeros(1)
    acts = []
    for _ in range(5):
        cand = nets.bc_query(m1.prior, s, a_prev, 0)
        clipped = np.clip(cand, -1.0, 1.0)
        acts.append(clipped)
        _, s = nets.model_query(m1.dynamics, s, clipped, 0)
        a_prev = cand
    acts = np.asarray(acts)
    assert np.allclose(plan, np.vstack([acts[1:], acts[-1:]]), atol=1e-10)

    # PDDM == NOPP composed with NOVF, bit-exact
    base = dict(horizon=5, n_samples=9, sigma=0.6, beta=0.2, kappa=1.0, seed=8)
    pddm = PlannerConfig(mode="PDDM", **base)
    nopp = PlannerConfig(mode="NOPP", **base)
    novf = PlannerConfig(mode="NOVF", **base)
    assert (pddm.use_bc_prior, pddm.use_value_tail) == (
        nopp.use_bc_prior,
        novf.use_value_tail,
    )
    b_pddm = rollout_batch(obs, np.zeros((5, 1)), models, pddm)
    b_nopp = rollout_batch(obs, np.zeros((5, 1)), models, nopp)
    assert np.array_equal(b_pddm.actions, b_nopp.actions)  # same Gaussian prior draws

    # scheduling independence: the planner equals the composition of its
    # individually extracted rollouts, bit-exactly, and reruns identically
    cfg_s = PlannerConfig(horizon=6, n_samples=9, sigma=0.5, beta=0.2, kappa=1.0, seed=5)
    plan_a = trajopt(obs, prev, models, cfg_s, step_index=4)
    parts = [sample_trajectory(n, obs, prev, models, cfg_s, step_index=4) for n in range(9)]
    rebuilt = RolloutBatch(
        np.stack([p[0] for p in parts]),
        np.array([p[1] for p in parts]),
        np.array([p[2] for p in parts]),
        np.ones(9, dtype=bool),
    )
    assert np.array_equal(plan_a, reweight(rebuilt, cfg_s.kappa, cfg_s.kappa_obj))
    assert np.array_equal(plan_a, trajopt(obs, prev, models, cfg_s, step_index=4))

    took = time.time() - t0
    assert took < 60.0
    _announce("1", f"algorithm-identity suite in {took:.1f}s")


# --- criterion 2: learner suite ---------------------------------------------


def test_criterion_2_learner_suite():
    t0 = time.time()
    rng = np.random.default_rng(1)

    # gradient check vs central differences
    params = init_mlp(4, 3, hidden=(7, 5), seed=4)
    xn = rng.standard_normal((11, 4))
    yn = rng.standard_normal((11, 3))
    grads, _ = backward(params, xn, yn)
    h = 1e-5
    worst = 0.0
    for arrs, garrs in ((params.weights, grads.weights), (params.biases, grads.biases)):
        for a, g in zip(arrs, garrs):
            it = np.nditer(a, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                keep = a[idx]
                a[idx] = keep + h
                up = float(np.mean((mlp_apply(params, xn) - yn) ** 2))
                a[idx] = keep - h
                down = float(np.mean((mlp_apply(params, xn) - yn) ** 2))
                a[idx] = keep
                fd = (up - down) / (2 * h)
                scale = max(abs(fd), abs(g[idx]), 1e-8)
                worst = max(worst, abs(fd - g[idx]) / scale)
    assert worst < 1e-4

    # normalization round trip
    x = rng.standard_normal((200, 5)) * 3 + 1
    stats = NormStats.from_data(x, x)
    assert np.abs(stats.denorm_y(stats.norm_y(x)) - x).max() <= 1e-10

    # seeded training reproducibility (bit-exact)
    xt = rng.standard_normal((96, 3))
    yt = rng.standard_normal((96, 2))
    config = TrainConfig(epochs=2, batch_size=32, seed=9)
    e1, _ = train_ensemble(xt, yt, "model", k=2, config=config, hidden=(12,))
    e2, _ = train_ensemble(xt, yt, "model", k=2, config=config, hidden=(12,))
    for a, b in zip(e1.members, e2.members):
        for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
            assert np.array_equal(wa, wb)

    # Adam first-step magnitude
    p = MlpParams([np.array([[1.0]])], [np.array([0.0])])
    g = MlpParams([np.array([[1.0]])], [np.array([1.0])])
    state = AdamState.zeros_like(p)
    adam_step(p, g, state, TrainConfig())
    assert abs((1.0 - p.weights[0][0, 0]) - 0.001) < 1e-9

    took = time.time() - t0
    assert took < 120.0
    _announce("2", f"learner suite (max grad err {worst:.2e}) in {took:.1f}s")


# --- criterion 3: oracle equivalences ---------------------------------------


def test_criterion_3_oracle_equivalences():
    rng = np.random.default_rng(2)

    # reweight vs direct softmax oracle on 100 random batches
    worst = 0.0
    for _ in range(100):
        n, h, act = rng.integers(2, 12), rng.integers(1, 8), rng.integers(1, 3)
        actions = rng.standard_normal((n, h, act))
        returns = rng.uniform(-5, 5, n)
        secondary = rng.uniform(-3, 3, n)
        kappa, kobj = rng.uniform(0, 3), rng.uniform(0, 3)
        batch = RolloutBatch(actions, returns, secondary, np.ones(n, dtype=bool))
        got = reweight(batch, kappa, kobj)
        w = np.exp(kappa * returns + kobj * secondary)
        blended = np.einsum("n,nha->ha", w, actions) / w.sum()
        expected = np.concatenate([blended[1:], blended[-1:]], axis=0)
        worst = max(worst, np.abs(got - expected).max())
    assert worst <= 1e-12

    # value targets vs brute-force window sums, exact
    for _ in range(100):
        n = int(rng.integers(3, 24))
        h = int(rng.integers(1, n + 1))
        rewards = rng.uniform(0, 1, n)
        ep = ds.Episode(np.zeros((n + 1, 3)), np.zeros((n, 2)), rewards)
        spec = ds.EnvSpec("toy", 3, 2, (-1, -1), (1, 1), 0.1, 32)
        rows = ds.make_training_rows(ds.Dataset([ep], spec), "value", h)
        oracle = np.array([np.sum(rewards[t : t + h]) for t in range(n - h + 1)])
        assert np.array_equal(rows.y.ravel(), oracle)

    # filter_top vs full sort oracle, exact
    spec = ds.EnvSpec("toy", 3, 2, (-1, -1), (1, 1), 0.1, 32)
    episodes = [
        ds.Episode(np.zeros((3, 3)), np.zeros((2, 2)), rng.uniform(0, 1, 2))
        for _ in range(500)
    ]
    data = ds.Dataset(episodes, spec)
    for pct in (1.0, 17.5, 60.0, 100.0):
        kept = ds.filter_top_episodes(data, pct)
        order = sorted(range(500), key=lambda i: (-episodes[i].ret, i))
        expect = {id(episodes[i]) for i in order[: int(np.ceil(pct * 5.0))]}
        assert {id(e) for e in kept.episodes} == expect

    # one-step planning return vs pencil-and-paper oracle
    dyn_member = MlpParams(
        weights=[np.zeros((6, 8)), np.zeros((8, 6))], biases=[np.zeros(8), np.zeros(6)]
    )
    dyn_member.biases[-1][0] = 0.7
    prior_member = MlpParams(
        weights=[np.zeros((6, 8)), np.zeros((8, 1))], biases=[np.zeros(8), np.array([0.25])]
    )
    value_member = MlpParams(
        weights=[np.zeros((6, 8)), np.zeros((8, 1))], biases=[np.zeros(8), np.array([1.5])]
    )
    models = PolicyModels(
        EnsembleNet([dyn_member], _identity_norm(6, 6), "model"),
        EnsembleNet([prior_member], _identity_norm(6, 1), "bc"),
        EnsembleNet([value_member], _identity_norm(6, 1), "value"),
        CARTPOLE_SPEC,
    )
    config = PlannerConfig(horizon=1, n_samples=2, sigma=0.0, beta=0.0, kappa=1.0, seed=0)
    obs = np.array([0.1, -0.9, 0.4, 0.0, 0.2])
    _, ret, _ = sample_trajectory(0, obs, np.zeros((1, 1)), models, config)
    assert abs(ret - 2.2) <= 1e-10

    _announce("3", f"oracle equivalences (reweight worst {worst:.2e})")


# --- shared desk-scale artifacts ---------------------------------------------
#
# The experiment criteria share trained model sets, cached on disk and keyed
# by a hash of everything that influences them, so the suite resumes cheaply
# after interruption and reruns are fast.

CARTPOLE_STUDY = {
    "env": "cartpole-swingup",
    "collect": {"kind": "scripted-swingup", "noise_std": 0.3, "quality": 0.6,
                "n_episodes": 25, "seed": 0},
    "train": {"value_horizon": 200},
    "planner": {"horizon": 32, "n_samples": 50, "sigma": 0.4, "beta": 0.35,
                "kappa": 2.0, "kappa_obj": 0.0, "mode": "MBOP", "seed": 0},
    "seeds": [0, 1, 2, 3, 4],
    "episodes_per_seed": 20,
    "variants": ["BC", "MBOP"],
    "precision": "float32",
}

POINTMASS_STUDY = {
    "env": "pointmass",
    "collect": {"kind": "pd-goal", "noise_std": 0.4, "quality": 0.5,
                "n_episodes": 50, "seed": 0},
    "train": {"value_horizon": 50},
    "planner": {"horizon": 16, "n_samples": 50, "sigma": 0.8, "beta": 0.2,
                "kappa": 0.0, "kappa_obj": 3.0, "mode": "MBOP", "seed": 0},
    "seeds": [0, 1],
    "episodes_per_seed": 2,
    "variants": ["MBOP"],
    "precision": "float32",
}


def _study_dir(study: dict) -> Path:
    key = hashlib.sha256(json.dumps(study, sort_keys=True).encode()).hexdigest()[:16]
    return CACHE / key


def _trained_study(study: dict) -> dict:
    """Collect + train once per study config; reuse across test runs."""
    out = _study_dir(study)
    cfg = runconfig.resolve({**study, "out_dir": str(out)})
    if not (out / "train_report.json").exists():
        out.mkdir(parents=True, exist_ok=True)
        pipeline.collect_run(cfg)
        pipeline.train_run(cfg, quiet=True)
    return cfg


def _cached_json(path: Path, builder):
    if path.exists():
        return json.loads(path.read_text())
    result = builder()
    path.write_text(json.dumps(result))
    return result


def _eval_summary(res) -> dict:
    return {
        "mean": res.mean,
        "std": res.std,
        "per_seed_means": {str(k): v for k, v in res.per_seed_means().items()},
        "violation_frac": res.violation_frac,
        "objective_mean": res.objective_mean,
        "plan_hz": res.plan_hz,
        "returns": res.returns.tolist(),
    }


def _evaluate_cached(cfg, variant, tag, objective=None, planner_overrides=None,
                     n_episodes=None, seeds=None) -> dict:
    out = _study_dir_from_cfg(cfg)

    def build():
        env = make_env(cfg["env"])
        models = pipeline.load_models(cfg)
        pcfg = runconfig.planner_config(cfg, **(planner_overrides or {}))
        res = evaluate_policy(
            env, models, pcfg, objective,
            n_episodes or cfg["episodes_per_seed"],
            seeds or cfg["seeds"], variant,
        )
        return _eval_summary(res)

    return _cached_json(out / f"eval_{tag}.json", build)


def _study_dir_from_cfg(cfg) -> Path:
    return Path(cfg["out_dir"])


@pytest.fixture(scope="session")
def cartpole_study():
    return _trained_study(CARTPOLE_STUDY)


@pytest.fixture(scope="session")
def pointmass_study():
    return _trained_study(POINTMASS_STUDY)


# --- criterion 4: desk-scale improvement over the operator -------------------


@pytest.mark.slow
@pytest.mark.acceptance
def test_criterion_4_improvement_over_data_and_prior(cartpole_study):
    cfg = cartpole_study
    data = pipeline.load_training_dataset(cfg)
    assert data.n_steps == 25_000
    data_mean = float(data.returns.mean())

    bc = _evaluate_cached(cfg, "BC", "bc")
    mbop = _evaluate_cached(cfg, "MBOP", "mbop")

    seeds = [str(s) for s in cfg["seeds"]]
    wins = sum(
        mbop["per_seed_means"][s] > bc["per_seed_means"][s] for s in seeds
    )
    detail = (
        f"MBOP {mbop['mean']:.1f} vs BC {bc['mean']:.1f} vs DATA {data_mean:.1f}; "
        f"per-seed wins {wins}/5"
    )
    # training health on the standard dataset: every member of every role
    # ends epoch 40 below its epoch-1 loss, and the one-step dynamics model
    # does not grossly overfit
    curves = _loss_curves(_study_dir_from_cfg(cfg) / "losses.csv")
    for (role, member), curve in curves.items():
        assert curve[-1] < curve[0], f"{role} member {member} loss did not decrease"
    report = json.loads((_study_dir_from_cfg(cfg) / "train_report.json").read_text())
    model_train = np.mean(report["roles"]["model"]["final_train_loss"])
    model_val = np.mean(report["roles"]["model"]["final_val_loss"])
    assert model_val < 10.0 * model_train, "one-step model grossly overfits"
    assert model_val < MODEL_VAL_MSE_BASELINE, "model val MSE above recorded baseline"
    assert wins >= 4, detail
    assert mbop["mean"] >= 1.05 * data_mean, detail
    _announce("4", detail)


def _loss_curves(path: Path) -> dict:
    import csv

    curves: dict = {}
    with open(path) as f:
        for row in csv.DictReader(f):
            key = (row["role"], int(row["member"]))
            curves.setdefault(key, []).append(float(row["train_loss"]))
    return curves


# --- criterion 5: ablation ordering ------------------------------------------


@pytest.mark.slow
@pytest.mark.acceptance
def test_criterion_5_mbop_beats_pddm(cartpole_study):
    cfg = cartpole_study
    mbop = _evaluate_cached(cfg, "MBOP", "mbop")
    pddm = _evaluate_cached(cfg, "PDDM", "pddm")
    seeds = [str(s) for s in cfg["seeds"]]
    wins = sum(
        mbop["per_seed_means"][s] >= pddm["per_seed_means"][s] for s in seeds
    )
    detail = f"MBOP {mbop['mean']:.1f} vs PDDM {pddm['mean']:.1f}; per-seed wins {wins}/5"
    assert wins >= 4, detail
    _announce("5", detail)


# --- criterion 6: zero-shot constraint ---------------------------------------


@pytest.mark.slow
@pytest.mark.acceptance
def test_criterion_6_position_constraint(cartpole_study):
    cfg = cartpole_study
    objective = ObjectiveSpec(kind="state-penalty", index=0, threshold=0.0, side="below")
    seeds = cfg["seeds"]
    free = _evaluate_cached(
        cfg, "MBOP", "constraint_free", objective=objective,
        planner_overrides={"kappa_obj": 0.0}, n_episodes=2, seeds=seeds,
    )
    tied = _evaluate_cached(
        cfg, "MBOP", "constraint_on", objective=objective,
        planner_overrides={"kappa_obj": CONSTRAINT_KAPPA_OBJ}, n_episodes=2, seeds=seeds,
    )
    detail = (
        f"violations {free['violation_frac']:.3f} -> {tied['violation_frac']:.3f}, "
        f"return {free['mean']:.1f} -> {tied['mean']:.1f}"
    )
    assert tied["violation_frac"] <= 0.5 * free["violation_frac"], detail
    assert tied["mean"] >= 0.6 * free["mean"], detail
    _announce("6", detail)


# --- criterion 7: zero-shot goal conditioning --------------------------------


@pytest.mark.slow
@pytest.mark.acceptance
def test_criterion_7_heading_conditioned_pointmass(pointmass_study):
    cfg = pointmass_study
    headings = {"+x": (1.0, 0.0), "-x": (-1.0, 0.0), "+y": (0.0, 1.0), "-y": (0.0, -1.0)}
    projections = {}
    for name, heading in headings.items():
        objective = ObjectiveSpec(
            kind="heading-goal", heading=heading, velocity_indices=(2, 3)
        )
        res = _evaluate_cached(
            cfg, "MBOP", f"goal_{name}", objective=objective,
            planner_overrides={"kappa": 0.0},
        )
        projections[name] = res["objective_mean"]
    detail = ", ".join(f"{k}: {v:+.3f}" for k, v in projections.items())
    assert all(v > 0 for v in projections.values()), detail
    _announce("7", detail)


# --- criterion 8: timing structure -------------------------------------------


@pytest.mark.slow
@pytest.mark.acceptance
def test_criterion_8_planning_frequency_structure(cartpole_study):
    cfg = dict(cartpole_study)
    cfg["planner"] = dict(cfg["planner"], n_samples=100)
    cfg["bench_horizons"] = [4, 8, 16]
    cfg["bench_steps"] = 1000

    def build():
        return pipeline.bench_run(cfg, quiet=True)

    payload = _cached_json(_study_dir_from_cfg(cfg) / "eval_bench.json", build)
    rows = payload["rows"]
    bc_hz = rows[0]["median_hz"]
    planning = [(r["horizon"], r["median_hz"]) for r in rows[1:]]
    detail = f"BC {bc_hz:.0f} Hz; MBOP " + ", ".join(
        f"h={h}: {hz:.1f} Hz" for h, hz in planning
    )
    hz_values = [hz for _, hz in planning]
    assert hz_values[0] > hz_values[1] > hz_values[2], detail
    assert all(bc_hz > hz for hz in hz_values), detail
    _announce("8", detail)


# --- criterion 9: filtering sweep --------------------------------------------


@pytest.mark.slow
@pytest.mark.acceptance
def test_criterion_9_filter_sweep_completes(tmp_path_factory):
    mixed = _mixed_quality_pointmass_dataset()
    out = tmp_path_factory.mktemp("filter_sweep")
    base = {
        "env": "pointmass",
        "out_dir": str(out),
        "dataset": str(mixed),
        "train": {"epochs": 8, "k": 2, "hidden": [64, 64], "value_horizon": 25},
        "planner": {"horizon": 8, "n_samples": 25, "sigma": 0.6, "beta": 0.2,
                    "kappa": 1.0, "seed": 0},
        "seeds": [0, 1],
        "episodes_per_seed": 1,
        "precision": "float32",
        "sweep": {"filter_top_percent": [10.0, 50.0, 100.0]},
    }
    cfg = runconfig.resolve(base)
    pipeline.train_run(cfg, quiet=True)
    res = pipeline.sweep_run(cfg, quiet=True)
    assert len(res["rows"]) == 3
    tops = sorted(r["filter_top_percent"] for r in res["rows"])
    assert tops == [10.0, 50.0, 100.0]
    # reproducible: a rerun of one grid point gives identical numbers
    rerun_cfg = runconfig.resolve({**base, "out_dir": str(out / "again"),
                                   "models_dir": str(out),
                                   "sweep": {"filter_top_percent": [100.0]}})
    rerun = pipeline.sweep_run(rerun_cfg, quiet=True)
    full = next(r for r in res["rows"] if r["filter_top_percent"] == 100.0)
    assert rerun["rows"][0]["mean_return"] == full["mean_return"]
    detail = "; ".join(
        f"top {r['filter_top_percent']:g}%: {r['mean_return']:.1f}" for r in res["rows"]
    )
    _announce("9", detail)


def _mixed_quality_pointmass_dataset() -> Path:
    from offmpc.envs import BehaviorPolicySpec, run_behavior_policy

    CACHE.mkdir(parents=True, exist_ok=True)
    path = CACHE / "pointmass_mixed.jsonl"
    if not path.exists():
        env = make_env("pointmass")
        good = run_behavior_policy(env, BehaviorPolicySpec("pd-goal", 0.3, 0.9), 10, 0)
        poor = run_behavior_policy(env, BehaviorPolicySpec("pd-goal", 0.3, 0.3), 10, 1)
        episodes = [ep for pair in zip(good, poor) for ep in pair]
        ds.save(ds.Dataset(episodes, env.spec), path)
    return path
