"""Acceptance checks, one test per criterion; each prints a PASS/FAIL line with the measured values."""

import dataclasses
import itertools
import math
import time

import numpy as np
import pytest
import yaml

from survgan import autodiff as ad
from survgan.autodiff import Tensor
from survgan.cli import main
from survgan.codec import CLIP, fit_codec
from survgan.dataset import ColumnSchema, SurvivalDataset
from survgan.downstream import brier_score, c_index, evaluation_horizons, train_cox, tstr
from survgan.gan import gradient_penalty
from survgan.km import StepSurvivalCurve, curve_from_pmf, kaplan_meier, km_divergence, optimism, optimism_bounds, short_sightedness
from survgan.nn import MLP, MlpConfig
from survgan.pipeline import PipelineConfig, fit, generate
from survgan.survival_net import deephit_loss
from survgan.toy import weibull_toy


def _fd(f, arr, h=1e-5):
    out = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def _rel(a, b, floor=1e-4):
    # below the floor this is an absolute 1e-8 bound; exact zeros (biases feeding batch norm)
    # otherwise just measure the finite difference's round-off
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def test_criterion_01_codec_round_trip(criterion):
    rng = np.random.default_rng(0)
    n = 1000
    schema = (
        ColumnSchema("bimodal", "continuous"),
        ColumnSchema("group", "categorical", ("a", "b", "c")),
        ColumnSchema("skewed", "continuous"),
    )
    x = np.where(rng.random(n) < 0.4, rng.normal(-5, 1, n), rng.normal(3, 0.5, n))
    data = np.column_stack([x, rng.integers(0, 3, n), rng.lognormal(1, 0.7, n)])
    ds = SurvivalDataset(schema, data, rng.exponential(3, n), rng.integers(0, 2, n))
    codec = fit_codec(ds, 10, seed=0)
    t0 = time.perf_counter()
    enc = codec.transform(ds.data)
    dec = codec.inverse_transform(enc)
    elapsed = time.perf_counter() - t0
    scalars = [b.start for b in codec.blocks if b.kind == "scalar"]
    unclipped = np.all(np.abs(enc[:, scalars]) < CLIP, axis=1)
    cat_exact = bool(np.array_equal(dec[:, 1], ds.data[:, 1]))
    cont = [0, 2]
    rel = np.abs(dec[unclipped][:, cont] - data[unclipped][:, cont]) / np.abs(data[unclipped][:, cont])
    ok = cat_exact and rel.max() < 1e-9 and elapsed < 1.0
    criterion(1, ok, f"categorical exact={cat_exact} max rel err={rel.max():.2e} rows unclipped={unclipped.sum()} time={elapsed:.3f}s")


def _oracle_km(times, events, at):
    s = 1.0
    for u in sorted(set(times)):
        if u > at:
            break
        n_risk = sum(1 for t in times if t >= u)
        d = sum(1 for t, e in zip(times, events) if t == u and e)
        s *= 1 - d / n_risk
    return s


def test_criterion_02_km_oracle(criterion):
    datasets = 0
    worst = 0.0
    samples = [p for n in range(1, 7) for p in itertools.permutations(range(1, 7), n)]
    samples += list(itertools.combinations_with_replacement(range(1, 7), 6))  # tied times
    for times in samples:
        grid = sorted(set(times)) + [0, 6.5]
        for ev in itertools.product((0, 1), repeat=len(times)):
            km = kaplan_meier(np.array(times, float), np.array(ev))
            got = km(grid)
            want = [_oracle_km(times, ev, g) for g in grid]
            worst = max(worst, float(np.max(np.abs(got - np.array(want)))))
            datasets += 1
    criterion(2, worst < 1e-12, f"{datasets} datasets, max |S - oracle| = {worst:.1e}")


def test_criterion_03_closed_form(criterion):
    t = np.linspace(0, 1, 10_001)[:-1]
    syn = StepSurvivalCurve(t, np.exp(-t), 1.0)
    real = StepSurvivalCurve(t, np.exp(-2 * t), 1.0)
    o, d = optimism(syn, real), km_divergence(syn, real)
    ok = abs(o - 0.1998) <= 1e-3 and abs(d - 0.1998) <= 1e-3
    criterion(3, ok, f"optimism={o:.5f} km_divergence={d:.5f} (target 0.1998 +- 1e-3)")


def test_criterion_04_bound_suite(criterion):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    violations, chain_violations, finite_kl = 0, 0, 0
    for _ in range(200):
        k = int(rng.integers(2, 21))
        support = np.cumsum(rng.uniform(0.1, 3.0, k))
        alpha = rng.uniform(0.1, 2.0)
        p = rng.dirichlet(np.full(k, alpha))
        q = rng.dirichlet(np.full(k, alpha))
        # occasional zero-mass cells exercise the infinite-KL convention
        if rng.random() < 0.2:
            p[rng.integers(k)] = 0.0
            p /= p.sum()
        b = optimism_bounds(p, q)
        o = abs(optimism(curve_from_pmf(support, p), curve_from_pmf(support, q)))
        violations += o > b["tv"] + 1e-9
        if math.isfinite(b["pinsker"]):
            finite_kl += 1
            chain_violations += b["tv"] > b["pinsker"] + 1e-9
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and chain_violations == 0 and elapsed < 5
    criterion(4, ok, f"|opt|>2TV: {violations}/200, 2TV>sqrt(2KL): {chain_violations}/{finite_kl}, time={elapsed:.2f}s")


def test_criterion_05_autodiff(criterion):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst_first, worst_second = 0.0, 0.0
    activations = ["tanh", "relu", "leaky_relu", "identity"]
    for i in range(100):
        depth = int(rng.integers(1, 3))
        hidden = tuple(int(w) for w in rng.integers(1, 7, depth))
        cfg = MlpConfig(
            int(rng.integers(1, 4)),
            int(rng.integers(1, 4)),
            hidden=hidden,
            activation=activations[i % 4],
            output_activation="softmax" if i % 3 == 0 else "identity",
            batch_norm=i % 5 == 0,
        )
        net = MLP(cfg, rng)
        x = rng.standard_normal((4, cfg.in_dim))
        target = rng.standard_normal((4, cfg.out_dim))
        loss = lambda: ((net(x) - target) ** 2).sum()
        for p, g in zip(net.parameters(), ad.grad(loss(), net.parameters())):
            worst_first = max(worst_first, _rel(g.value, _fd(lambda: loss().item(), p.value)))
    for _ in range(10):
        net = MLP(MlpConfig(3, 1, hidden=(5, 4), activation="tanh"), rng)
        x = rng.standard_normal((6, 3))
        penalty = lambda: gradient_penalty(lambda v: net(v), x, 10.0)[0]
        for p, g in zip(net.parameters(), ad.grad(penalty(), net.parameters())):
            worst_second = max(worst_second, _rel(g.value, _fd(lambda: penalty().item(), p.value)))
    elapsed = time.perf_counter() - t0
    ok = worst_first < 1e-4 and worst_second < 1e-3 and elapsed < 30
    criterion(5, ok, f"first-order max rel={worst_first:.2e}, penalty second-order max rel={worst_second:.2e}, time={elapsed:.1f}s")


def test_criterion_06_survival_loss_gradients(criterion):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        logits = rng.standard_normal((2, 4))
        bins = np.sort(rng.integers(0, 4, 2))
        times = np.sort(rng.random(2)) + bins
        events = rng.integers(0, 2, 2)
        events[0] = 1
        z = Tensor(logits, requires_grad=True)
        loss = lambda t: deephit_loss(ad.softmax(t, 1), bins, times, events, 0.28, 0.38)
        (g,) = ad.grad(loss(z), [z])
        num = _fd(lambda: loss(Tensor(logits)).item(), logits, h=1e-6)
        worst = max(worst, _rel(g.value, num))
    criterion(6, worst < 1e-4, f"50 instances, max rel err={worst:.2e}")


def test_criterion_09_identities(criterion):
    t, e = np.array([1.0, 2.0, 3.0, 4.0]), np.ones(4, int)
    perfect = c_index(t, e, -t)
    rng = np.random.default_rng(0)
    risk = rng.standard_normal(200)
    tt, ee = rng.exponential(1, 200), np.ones(200, int)
    mean_perm = float(np.mean([c_index(tt, ee, rng.permutation(risk)) for _ in range(100)]))
    brier = brier_score(t, e, np.full(4, 0.5), 2.5)
    ok = perfect == 1.0 and abs(mean_perm - 0.5) <= 0.05 and brier == 0.25
    criterion(9, ok, f"perfect C={perfect}, permuted mean C={mean_perm:.4f}, constant-0.5 Brier={brier}")


# end-to-end toy runs shared by criteria 7 and 8

SEEDS = (0, 1, 2)
N_TOY = 2000


@pytest.fixture(scope="module")
def toy_runs():
    runs = []
    for seed in SEEDS:
        train = weibull_toy(N_TOY, seed=seed)
        test = weibull_toy(N_TOY, seed=1000 + seed)
        horizons = evaluation_horizons(train.times)
        models = {"cox": train_cox}
        real_km = kaplan_meier(train.times, train.events)

        def score(model):
            syn = generate(model, N_TOY, np.random.default_rng(seed))
            km = kaplan_meier(syn.times, syn.events)
            rep = tstr(train, test, syn, models, horizons, seed)
            return {
                "optimism": optimism(km, real_km),
                "short_sightedness": short_sightedness(km, real_km),
                "km_divergence": km_divergence(km, real_km),
                "c_index": rep.synthetic["cox"].mean_c_index,
                "brier": rep.synthetic["cox"].mean_brier,
                "real_c_index": rep.original["cox"].mean_c_index,
            }

        t0 = time.perf_counter()
        model = fit(train, PipelineConfig(), seed)
        fit_seconds = time.perf_counter() - t0
        full = score(model)
        # the regressor is the last stage, so dropping it equals refitting with the ablation
        no_reg = score(dataclasses.replace(model, regressor=None, config=PipelineConfig().with_ablation("no-time-regressor")))
        no_cgan = score(fit(train, PipelineConfig().with_ablation("no-conditional-gan"), seed))
        runs.append({"seed": seed, "fit_seconds": fit_seconds, "full": full, "no_reg": no_reg, "no_cgan": no_cgan})
        print(f"toy seed {seed}: fit {fit_seconds:.0f}s full={full} no_reg={no_reg} no_cgan={no_cgan}")
    return runs


@pytest.mark.slow
def test_criterion_07_toy_end_to_end(toy_runs, criterion):
    med = lambda key: float(np.median([r["full"][key] for r in toy_runs]))
    gap = float(np.median([abs(r["full"]["c_index"] - r["full"]["real_c_index"]) for r in toy_runs]))
    slowest = max(r["fit_seconds"] for r in toy_runs)
    opt, ss, kmd = med("optimism"), med("short_sightedness"), med("km_divergence")
    checks = {
        "|optimism|<=0.10": abs(opt) <= 0.10,
        "short_sightedness<=0.15": ss <= 0.15,
        "km_divergence<=0.12": kmd <= 0.12,
        "C-index gap<=0.08": gap <= 0.08,
        "fit<=300s": slowest <= 300,
    }
    failed = [k for k, v in checks.items() if not v]
    detail = (
        f"median optimism={opt:.4f} short_sightedness={ss:.4f} km_divergence={kmd:.4f} "
        f"C-index gap={gap:.4f} slowest fit={slowest:.0f}s" + (f" failed: {failed}" if failed else "")
    )
    criterion(7, not failed, detail)


@pytest.mark.slow
def test_criterion_08_ablation_direction(toy_runs, criterion):
    med = lambda variant, key: float(np.median([r[variant][key] for r in toy_runs]))
    kmd_full, kmd_noreg = med("full", "km_divergence"), med("no_reg", "km_divergence")
    c_full, c_noreg = med("full", "c_index"), med("no_reg", "c_index")
    b_full, b_nocgan = med("full", "brier"), med("no_cgan", "brier")
    regressor_matters = kmd_noreg > kmd_full or c_noreg < c_full
    cgan_matters = b_nocgan > b_full
    detail = (
        f"no-time-regressor kmd {kmd_noreg:.4f} vs {kmd_full:.4f}, C {c_noreg:.4f} vs {c_full:.4f}; "
        f"no-conditional-gan Brier {b_nocgan:.4f} vs {b_full:.4f}"
    )
    criterion(8, regressor_matters and cgan_matters, detail)


FAST_CONFIG = {
    "dataset": {"toy": {"n": 600, "seed": 0}},
    "pipeline": {
        "gan": {"iterations": 60, "batch_size": 200, "generator_hidden": [64, 64], "discriminator_hidden": [64]},
        "survival": {"max_epochs": 20, "hidden": [64]},
        "regressor": {"n_estimators": 50},
    },
    "metrics": {"seeds": [7], "models": ["cox", "deephit"]},
}


def test_criterion_10_cli_determinism(tmp_path, capsys, criterion):
    config = tmp_path / "run.yaml"
    config.write_text(yaml.safe_dump(FAST_CONFIG))
    blobs = []
    for tag in ("first", "second"):
        out = tmp_path / tag
        assert main(["train", "--config", str(config), "--seed", "7", "--out", str(out)]) == 0
        assert main(["generate", "--model", str(out / "model"), "--rows", "1000", "--seed", "7", "--out", str(out / "syn.csv")]) == 0
        args = ["evaluate", "--config", str(config), "--real", str(out / "test.csv"), "--train", str(out / "train.csv")]
        assert main(args + ["--synthetic", str(out / "syn.csv"), "--seed", "7", "--out", str(out / "eval")]) == 0
        blobs.append((out / "eval" / "metrics.json").read_bytes())
    capsys.readouterr()
    criterion(10, blobs[0] == blobs[1], f"metrics.json {len(blobs[0])} bytes, identical={blobs[0] == blobs[1]}")
