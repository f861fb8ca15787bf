#!/usr/bin/env python3
"""End-to-end smoke test for the xsect_py extension module.

Builds nothing itself: run `cargo build -p xsect-py` first, then
`python3 python/smoke_test.py`. Loads the freshest cdylib from
target/{debug,release}, then exercises panels, models, and a small
walk-forward experiment.
"""

import importlib.machinery
import importlib.util
import json
import math
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def load_module():
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libxsect_py.so", "xsect_py.so", "libxsect_py.dylib")
    ]
    built = [p for p in candidates if p.exists()]
    if not built:
        sys.exit("no built extension found; run `cargo build -p xsect-py` first")
    path = max(built, key=lambda p: p.stat().st_mtime)
    loader = importlib.machinery.ExtensionFileLoader("xsect_py", str(path))
    spec = importlib.util.spec_from_loader("xsect_py", loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    print(f"loaded {path}")
    return module


def main():
    xs = load_module()
    assert xs.N_FEATURES == 125
    assert xs.REPORT_SCHEMA_VERSION == 1
    assert xs.MODEL_SCHEMA_VERSION == 1

    # Rank scaling: ascending ranks over n, ties averaged.
    assert xs.rank_scale([3.0, 1.0, 2.0]) == [1.0, 1.0 / 3.0, 2.0 / 3.0]
    assert xs.rank_scale([1.0, 1.0, 2.0]) == [0.5, 0.5, 1.0]

    # Synthesize a panel, round-trip it through CSV.
    config = {
        "n_stocks": 40,
        "n_months": 30,
        "start_month": "2000-01",
        "signal_strength": 0.4,
        "signal_factor": 3,
        "sigma_signal": 0.05,
        "sigma_noise": 0.02,
        "ar_rho": 0.9,
        "missing_rate": 0.0,
        "seed": 7,
    }
    panel = xs.Panel.synth(json.dumps(config))
    months = panel.months()
    assert months[0] == "2000-01" and months[-1] == "2002-06"
    assert len(months) == 30
    assert panel.universe("2000-01") == sorted(panel.universe("2000-01"))
    assert len(panel.universe("2001-06")) == 40
    assert panel.validate() == []

    with tempfile.TemporaryDirectory() as tmp:
        path = str(Path(tmp) / "panel.csv")
        panel.save(path)
        reloaded = xs.Panel.load(path)
        assert reloaded.months() == months
        assert len(reloaded) == len(panel)
        # fwd_return exists everywhere except the final month.
        stock = panel.universe("2000-01")[0]
        assert reloaded.fwd_return("2000-01", stock) == panel.fwd_return("2000-01", stock)
        assert reloaded.fwd_return("2002-06", stock) is None

    # Assemble a training window and fit a model on it directly.
    features, targets, meta = xs.training_set(panel, "2002-02", 12)
    assert len(features) == len(targets) == len(meta)
    assert len(features[0]) == xs.N_FEATURES
    assert all(0.0 < t <= 1.0 for t in targets)
    anchor_months = {m for m, _ in meta}
    assert min(anchor_months) == "2001-01" and max(anchor_months) == "2001-12"

    spec = {"family": "forest", "hyper": {"n_trees": 20, "max_depth": 5, "max_features": 11}}
    model = xs.Model.fit(json.dumps(spec), features, targets, 13)
    again = xs.Model.fit(json.dumps(spec), features, targets, 13)
    preds = model.predict(features[:10])
    assert preds == again.predict(features[:10]), "same seed must reproduce"
    assert model.label == "RF_d5_f11"

    restored = xs.Model.from_json(model.to_json(), "RF_d5_f11")
    assert restored.predict(features[:10]) == preds

    mlp_spec = {"family": "mlp", "arch": {"name": "TINY4", "hidden": [4], "dropout": 0.0},
                "epochs": 3, "learning_rate": 0.001}
    net = xs.Model.fit(json.dumps(mlp_spec), features, targets, 3)
    assert net.label == "TINY4"
    assert all(math.isfinite(p) for p in net.predict(features[:5]))

    # A small two-strategy walk-forward run, reported as JSON.
    run_config = {
        "walk_forward": {
            "train_window": 12,
            "eval_start": "2002-02",
            "eval_end": "2002-06",
            "seed": 11,
        },
        "strategies": [
            {"family": "forest", "hyper": {"n_trees": 10, "max_depth": 3, "max_features": 5}},
            {"family": "mlp", "arch": {"name": "TINY8", "hidden": [8], "dropout": 0.0},
             "epochs": 5, "learning_rate": 0.001},
        ],
    }
    report = json.loads(xs.run_experiment(panel, json.dumps(run_config)))
    assert report["schema_version"] == xs.REPORT_SCHEMA_VERSION
    labels = [row["label"] for row in report["strategies"]]
    assert labels == ["RF_d3_f5", "TINY8"]
    for row in report["strategies"]:
        assert row["error"] is None
        assert row["n_months"] == 5
        assert -1.0 <= row["corr_mean"] <= 1.0

    print("smoke test passed")


if __name__ == "__main__":
    main()
