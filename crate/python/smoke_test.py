"""Smoke test for the `jfm` extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/jfm-*.whl
"""

import json
import math
import os
import tempfile

import jfm


def main():
    spec = json.dumps({
        "scenario": "shared_fraction_sweep",
        "p": 10,
        "n1": 120,
        "n2": 60,
        "n_test": 200,
        "replicates": 1,
        "seed": 3,
    })
    train, test, truth = jfm.simulate(spec, 0)
    assert train.group_sizes == [120, 60], train.group_sizes
    assert len(train.feature_names) == 10
    assert len(truth["beta_true"]) == 2
    print(train, test)

    # momentum restart; the plain schedule needs more than the default
    # 10000 iterations at this smoothing level
    opts = json.dumps({"solver": {"restart": True}})
    fit = jfm.fit(train, "jfm", lambda_f=0.05, lambda_sim=0.05, lambda_sp=[0.02, 0.03], options=opts)
    assert fit.converged, fit
    assert fit.group_ids == train.group_ids
    assert len(fit.coefficients) == 2 and len(fit.coefficients[0]) == 10
    assert math.isfinite(fit.objective)
    print(fit, "iterations:", fit.iterations)

    probs = fit.predict([[0.0] * 10, [1.0] * 10], train.group_ids[1])
    assert len(probs) == 2 and all(0.0 < q < 1.0 for q in probs)

    report = fit.evaluate(test, 0.5, truth["beta_true"])
    for g in train.group_ids:
        auc = report["per_group"][g]["auc"]
        assert 0.5 < auc <= 1.0, (g, auc)
    assert "estimation" in report
    print("test AUC:", {g: round(m["auc"], 4) for g, m in report["per_group"].items()})

    again = jfm.Fit.from_json(fit.to_json())
    assert again.coefficients == fit.coefficients
    assert again.intercepts == fit.intercepts

    for model in ("sfm", "separate", "ignorant"):
        other = jfm.fit(train, model, lambda_f=0.05, lambda_sp=[0.02], options=opts)
        assert other.model == model, other.model

    tuning = json.dumps({
        "grid": {"lambda_f": [0.01, 0.1], "lambda_sim": [0.01], "lambda_sp": [0.1, 1.0]},
        "cv": {"folds": 3, "seed": 1},
    })
    result = jfm.grid_search(train, "jfm", tuning, opts)
    assert len(result["table"]) == 4, len(result["table"])
    print("best:", result["best"])

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "train.csv")
        train.to_csv(path)
        back = jfm.Design.from_csv(path)
        assert back.group_sizes == train.group_sizes

    try:
        jfm.fit(train, "no-such-model")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown model accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
