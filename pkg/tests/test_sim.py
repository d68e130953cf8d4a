import json
from pathlib import Path

import numpy as np
import pytest

from shufflefl import sim
from shufflefl.exceptions import ConfigError
from shufflefl.permute import SEED_MASK, ShuffleRule
from shufflefl.server import ClientUpdate
from shufflefl.sim import LEAK_DEFENSES, SimConfig, leak_csv, run_leak_bench, run_rule_inference, run_simulation

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _tiny(**kw):
    base = dict(n_clients=10, n_attackers=2, participants_per_round=5, rounds=2, local_epochs=1, lr=1e-2,
                batch_size=32, dataset={"kind": "blobs", "d": 16, "classes": 4, "n_train": 300, "n_test": 80},
                model={"kind": "mlp", "hidden": [8]}, seed=3)
    base.update(kw)
    return SimConfig(**base)


def test_rounds_zero_empty():
    res = run_simulation(_tiny(rounds=0))
    assert res.metrics == [] and res.registry.labels == {}
    assert res.metrics_csv() == "round,cluster,accuracy,backdoor_acc\n"


def test_same_seed_byte_identical(tmp_path):
    cfg = _tiny(attack={"kind": "label_flip"})
    a = run_simulation(cfg)
    b = run_simulation(cfg)
    assert a.metrics_csv() == b.metrics_csv()
    assert a.clusters_jsonl() == b.clusters_jsonl()
    c = run_simulation(_tiny(attack={"kind": "label_flip"}, seed=4))
    assert c.clusters_jsonl() != a.clusters_jsonl()


def test_thread_count_does_not_change_output(monkeypatch):
    cfg = _tiny(attack={"kind": "noise_inject"})
    monkeypatch.setenv("TAZZA_THREADS", "1")
    one = run_simulation(cfg)
    monkeypatch.setenv("TAZZA_THREADS", "3")
    three = run_simulation(cfg)
    assert one.metrics_csv() == three.metrics_csv()
    assert one.clusters_jsonl() == three.clusters_jsonl()


def test_threads_env_parsing(monkeypatch):
    monkeypatch.setenv("TAZZA_THREADS", "0")
    assert sim._threads() >= 1
    monkeypatch.setenv("TAZZA_THREADS", "x")
    with pytest.raises(ConfigError):
        sim._threads()
    monkeypatch.delenv("TAZZA_THREADS")
    assert sim._threads() == 1


@pytest.mark.parametrize("kw", [
    {"n_attackers": 6},
    {"participants_per_round": 11},
    {"participants_per_round": 0},
    {"rounds": -1},
    {"lr": 0.0},
    {"dirichlet_alpha": 0.0},
    {"probe_count": 0},
    {"defense": {"aggregator": "bulyan"}},
    {"dataset": {"kind": "cifar"}},
    {"attack": {"kind": "scaling"}},
    {"dbscan": {"eps": -1.0}},
    {"seed": -1},
    {"seed": "18446744073709551616"},
    {"seed": True},
    {"validation_output": "probs"},
])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        _tiny(**kw)


def test_config_half_attackers_allowed():
    assert _tiny(n_attackers=5).n_attackers == 5


def test_config_json_roundtrip(tmp_path):
    cfg = _tiny(seed=2**64 - 1)
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert json.loads(p.read_text())["seed"] == "18446744073709551615"
    assert SimConfig.from_json(p) == cfg
    assert "seed" not in json.loads(cfg.to_json(redact_seed=True))
    p.write_text(json.dumps({"n_clients": 4, "bogus": 1}))
    with pytest.raises(ConfigError):
        SimConfig.from_json(p)
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        SimConfig.from_json(p)


def test_bundled_configs_parse():
    for p in sorted(CONFIGS.glob("*.json")):
        SimConfig.from_json(p)


def test_outputs_written(tmp_path):
    res = run_simulation(_tiny(attack={"kind": "backdoor", "patch": {"height": 2, "width": 2}}))
    res.write(tmp_path)
    rows = (tmp_path / "metrics.csv").read_text().splitlines()
    assert rows[0] == "round,cluster,accuracy,backdoor_acc"
    assert len(rows) > 1 and all(r.split(",")[3] != "" for r in rows[1:])
    recs = [json.loads(line) for line in (tmp_path / "clusters.jsonl").read_text().splitlines()]
    assert [r["round"] for r in recs] == [1, 2]
    for r in recs:
        assert set(r) == {"round", "client_ids", "pseudo_labels", "global_labels", "cluster_accuracy",
                          "benign_accuracy"}
        assert len(r["client_ids"]) == len(r["pseudo_labels"]) == 5
        assert all(0.0 <= a <= 1.0 for a in r["cluster_accuracy"].values())


def test_similarity_logging():
    res = run_simulation(_tiny(log_similarity=True, rounds=1))
    rec = json.loads(res.clusters_jsonl())
    S = np.array(rec["similarity"])
    assert S.shape == (5, 5) and np.allclose(np.diag(S), 1.0)


def test_jsonl_contains_no_seed():
    res = run_simulation(_tiny(seed=987654321987654321))
    assert "987654321987654321" not in res.clusters_jsonl() + res.metrics_csv()


def test_server_rejects_rule_objects():
    shape = sim.ArchShape("mlp", 4, (3,), 2)
    update = ClientUpdate(0, None, np.ones((1, 4)), 1)
    sim._assert_rule_free([update])
    update.rule = ShuffleRule.identity(shape)
    with pytest.raises(RuntimeError):
        sim._assert_rule_free([update])


def test_server_receives_only_updates(monkeypatch):
    seen = []
    original = sim.Server.receive

    def spy(self, updates, tag, log_similarity=False):
        seen.extend(updates)
        for u in updates:
            assert isinstance(u, ClientUpdate)
            assert not any(isinstance(v, ShuffleRule) for v in vars(u).values())
        assert isinstance(tag, int)
        return original(self, updates, tag, log_similarity)

    monkeypatch.setattr(sim.Server, "receive", spy)
    run_simulation(_tiny())
    assert len(seen) == 10


@pytest.mark.parametrize("agg", ["fedavg", "median", "trimmed_mean", "multikrum"])
def test_baseline_aggregators_run(agg):
    res = run_simulation(_tiny(defense={"aggregator": agg, "krum_f": 1}))
    assert all(set(m.cluster_accuracy) == {0} for m in res.metrics)


@pytest.mark.parametrize("per_update", [{"kind": "prune", "ratio": 0.9}, {"kind": "dp", "level": "L"}])
def test_per_update_defenses_run(per_update):
    res = run_simulation(_tiny(defense={"aggregator": "fedavg", "per_update": per_update}))
    assert len(res.metrics) == 2


def test_rnn_on_sequences():
    cfg = _tiny(dataset={"kind": "sequences", "classes": 3, "T": 6, "d": 4, "n_train": 200, "n_test": 60},
                model={"kind": "rnn", "hidden": 6})
    res = run_simulation(cfg)
    assert len(res.metrics) == 2
    with pytest.raises(ConfigError):
        run_simulation(_tiny(model={"kind": "rnn"}))


def test_byzantine_consensus_run_completes():
    res = run_simulation(_tiny(byzantine_consensus=True, participants_per_round=7))
    assert len(res.metrics) == 2


def test_attackers_are_last_ids():
    assert sim.attacker_ids(_tiny()) == [8, 9]


def test_mixed_clusters_helper():
    res = sim.SimResult([sim.RoundMetrics(1, {}, 0.0, {}, {0: 0, 1: 0, 9: 1}, [], []),
                         sim.RoundMetrics(2, {}, 0.0, {}, {0: 0, 1: 1, 9: 1}, [], [])], None, [9])
    assert res.mixed_clusters() == [2]
    assert res.mixed_clusters(after_round=2) == []


@pytest.mark.slow
def test_no_attack_converges_to_one_cluster():
    hits = 0
    for s in range(10):
        cfg = SimConfig(n_clients=20, n_attackers=0, participants_per_round=20, rounds=5, seed=s)
        res = run_simulation(cfg)
        hits += len(set(res.metrics[-1].assignment.values())) == 1
    assert hits >= 9


# ---------------------------------------------------------------- benches

def _blob_leak_cfg(**kw):
    return SimConfig(dataset={"kind": "blobs", "d": 64, "n_train": 200, "n_test": 20},
                     model={"kind": "mlp", "hidden": [32]}, lr=0.1, leak={"samples": 20}, **kw)


def test_leak_bench_shape_and_shuffle_exactness():
    rows = run_leak_bench(_blob_leak_cfg())
    assert [r.defense for r in rows] == sorted(LEAK_DEFENSES)
    by = {r.defense: r for r in rows}
    # blob features are off the 8-bit grid, so rendering caps PSNR below the exact sentinel
    assert by["none"].mean_psnr >= 40
    assert min(by["shuffle"].psnr_vs_shuffled) >= 40
    assert by["shuffle"].mean_psnr < 20
    assert by["prune_0.99"].mean_psnr < by["none"].mean_psnr - 10
    assert by["dp_S"].mean_psnr >= by["dp_M"].mean_psnr >= by["dp_L"].mean_psnr
    text = leak_csv(rows)
    assert text.splitlines()[0].startswith("defense,mean_psnr")
    assert len(text.splitlines()) == 1 + len(LEAK_DEFENSES)


def test_leak_bench_rejects_unknown_defense():
    with pytest.raises(ConfigError):
        run_leak_bench(_blob_leak_cfg(), defenses=["none", "homomorphic"])


def test_rule_inference_protocol_vs_plaintext():
    cfg = SimConfig(n_clients=4, n_attackers=0, participants_per_round=4, dataset={"kind": "blobs", "d": 64, "n_train": 400, "n_test": 20},
                    model={"kind": "mlp", "hidden": [32]}, seed=1)
    rows = run_rule_inference(cfg)
    assert len(rows) == 4
    assert all(r.displacement > 64 / 4 for r in rows)
    plain = run_rule_inference(cfg, plaintext_reference=True)
    assert all(r.displacement < 64 / 4 for r in plain)
    assert SEED_MASK == 2**64 - 1
