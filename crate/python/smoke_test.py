"""Smoke test for the compiled extension: build it with
`maturin develop --release -m crates/py/Cargo.toml`, then run this file."""

import json
import tempfile

import icode_lab_py as lab


def main():
    assert "robot" in lab.presets()
    cfg = json.loads(lab.preset_config("linear_toy"))
    cfg["epochs"] = 5
    text = json.dumps(cfg)

    data = lab.generate_dataset(text)
    assert len(data) == cfg["trajectories"]
    assert len(data.observed(0)) == cfg["steps"] + 1

    with tempfile.TemporaryDirectory() as d:
        fp = data.save(d)
        assert lab.Dataset.load(d).fingerprint() == fp

    run = lab.train_model(text, data, kind="icode")
    assert len(run.loss_curve) == 5
    metrics = json.loads(run.model.evaluate(data))
    assert abs(metrics["rmse"] ** 2 - metrics["mse"]) < 1e-12
    pred = run.model.predict(data, 0)
    assert len(pred) == cfg["steps"] + 2 - cfg["split"]

    clone = lab.Model.from_json(run.model.to_json())
    assert clone.evaluate(data) == run.model.evaluate(data)

    check = {"state_box": [[-1.0, 1.0], [-1.0, 1.0]], "input_box": [[0.0, 0.5]], "samples": 64}
    report = json.loads(run.model.contraction_check(json.dumps(check)))
    assert report["verdict"] in ("certified_on_samples", "violated")

    f = lab.glyco_rhs([1.0] * 10, [0.1, 0.2, 0.3])
    assert abs(f[0] + 0.984823936) < 1e-9

    csv = lab.compare(json.dumps(dict(cfg, epochs=2)))
    assert csv.splitlines()[0] == "model,scenario,mse,mae,rmse,r2"
    assert len(csv.splitlines()) == 5

    try:
        lab.generate_dataset(json.dumps(dict(cfg, epochs=0)))
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")
    print("smoke test ok")


if __name__ == "__main__":
    main()
