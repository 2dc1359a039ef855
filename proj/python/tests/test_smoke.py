import math

import numpy as np
import pytest

import crc


def ref1():
    state = crc.MarketState(spot=100.0, v=0.0001)
    p = crc.HestonParams(r=0.0205, q=0.03, k=7.797, theta=0.247, sigma=0.280, rho=0.042)
    j = crc.JumpSpec(lambda_=0.081, nu=[0.159], delta=[0.205])
    return state, p, j


def test_char_fn_identities():
    state, p, j = ref1()
    assert abs(crc.char_fn(0j, 1.0, state, p, j) - 1.0) < 1e-12
    fwd = crc.char_fn(-1j, 1.0, state, p, j)
    assert abs(fwd - 100.0 * math.exp(p.r - p.q)) < 1e-9 * 100.0


def test_price_and_implied_vol_round_trip():
    state, p, j = ref1()
    c = crc.price(state, p, j, strike=100.0, tau=0.5)
    pt = crc.price(state, p, j, strike=100.0, tau=0.5, put=True)
    parity = 100.0 * math.exp(-p.q * 0.5) - 100.0 * math.exp(-p.r * 0.5)
    assert c - pt == pytest.approx(parity, abs=1e-10)
    bs = crc.bs_price(100.0, 110.0, 0.7, 0.25, 0.01, 0.02)
    assert crc.implied_vol(bs, 100.0, 110.0, 0.7, 0.01, 0.02) == pytest.approx(0.25, abs=1e-10)


def test_degenerate_surface_is_flat():
    state = crc.MarketState(spot=100.0, v=0.04)
    p = crc.HestonParams(k=2.0, theta=0.04, sigma=1e-6)
    vols = crc.surface(state, p, crc.JumpSpec())
    assert vols.shape == (10, 13)
    assert np.max(np.abs(vols - 0.2)) < 1e-3
    report = crc.check_arbitrage(vols)
    assert report["clean"]
    assert crc.delta_c(vols, vols) == 0.0


def test_small_dataset():
    x, y, manifest = crc.generate(2, seed=3)
    assert x.shape[1] == 41 and y.shape[1] == 130
    assert x.shape[0] + __import__("json").loads(manifest)["n_dropped"] == 2
    assert len(crc.columns()) == 171
    x2, y2, _ = crc.generate(2, seed=3)
    assert np.array_equal(y, y2)


def test_domain_errors_surface_as_exceptions():
    with pytest.raises(crc.DomainError):
        crc.implied_vol(200.0, 100.0, 100.0, 1.0)


def test_train_and_simulate_tiny(tmp_path):
    import json

    x, y, _ = crc.generate(6, seed=5)
    data = tmp_path / "d.csv"
    np.savetxt(data, np.hstack([x, y]), delimiter=",", fmt="%.17g", header=",".join(crc.columns()), comments="")
    small = {"network": {"width": 16, "n_main_layers": 1}, "train": {"epochs": 2, "batch_size": 4}}
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"nn1": small, "nn2": small}))

    rmse1 = crc.train("nn1", str(data), str(tmp_path / "nn1.w"), config=str(config))
    rmse2 = crc.train("nn2", str(data), str(tmp_path / "nn2.w"), config=str(config), nn1=str(tmp_path / "nn1.w"))
    assert math.isfinite(rmse1) and math.isfinite(rmse2)

    nn1 = crc.Network.load(str(tmp_path / "nn1.w"))
    nn2 = crc.Network.load(str(tmp_path / "nn2.w"))
    assert (nn1.input_dim, nn1.output_dim) == (41, 130)
    state, p, j = ref1()
    assert crc.nn1_surface(nn1, state, p, j).shape == (10, 13)

    a = crc.simulate(nn1, nn2, config=str(config), n_steps=3, seed=2)
    b = crc.simulate(nn1, nn2, config=str(config), n_steps=3, seed=2)
    assert [r["step"] for r in a] == [0, 1, 2, 3]
    assert all(np.array_equal(r["vols"], s["vols"]) for r, s in zip(a, b))


def test_config_errors_surface_as_exceptions(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text('{"nn1": {"train": {"epoch": 3}}}')
    with pytest.raises(crc.ConfigError):
        crc.train("nn1", str(tmp_path / "missing.csv"), str(tmp_path / "out.w"), config=str(config))
    with pytest.raises(crc.IoError):
        crc.Network.load(str(tmp_path / "missing.w"))
