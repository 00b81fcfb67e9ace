"""Smoke test for the infotime_py extension.

Build and install it first, for example with
`pip install --no-build-isolation ./crates/py`, then run this script.
"""

import math

import infotime_py as it

TINY = """\
dataset = synthetic
lookback = 16
horizon = 8
epochs = 2
batch_size = 16
latent = 4
hidden = 8
backbone = mlp
arm = infotime
synth.length = 300
synth.components = 2
synth.covariate_lead = 8
synth.noise_channels = 1
"""


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    cfg = it.Config(TINY)
    assert cfg.get("lookback") == "16"
    cfg.set("seed", "3")
    assert "seed = 3" in cfg.render()
    try:
        cfg.set("no_such_key", "1")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    frame = cfg.frame()
    assert len(frame) == 300
    assert frame.names[0] == "y0"
    rebuilt = it.Frame(frame.rows(), frame.names)
    assert rebuilt.to_csv() == frame.to_csv()

    result = it.fit(cfg, frame)
    again = it.fit(cfg, frame)
    assert result.runlog_csv() == again.runlog_csv(), "fit is not deterministic"
    assert result.test_mse is not None and math.isfinite(result.test_mse)
    assert result.best_epoch >= 1

    std_frame, mean, std = it.standardize(cfg, frame)
    assert len(mean) == len(std) == len(frame.names)
    rows = std_frame.rows()
    history = [rows[0:16], rows[16:32]]
    forecast = result.predict(history)
    assert len(forecast) == 2 and len(forecast[0]) == 8 and len(forecast[0][0]) == 1

    assert close(it.mse([1.0, 2.0], [1.0, 4.0]), 2.0)
    assert close(it.mae([1.0, 2.0], [1.0, 4.0]), 1.0)
    assert close(it.vclub([0.0, 0.0], [0.0, 0.0]), 0.0)

    series = [[[float(t)] for t in range(8)]]
    subs = it.downsample(series, 2)
    assert len(subs) == 4
    assert [v[0] for v in subs[1][0]] == [1.0, 5.0]
    assert it.interleave(subs) == series

    print(f"ok: test mse {result.test_mse:.4f}, best epoch {result.best_epoch}")


if __name__ == "__main__":
    main()
