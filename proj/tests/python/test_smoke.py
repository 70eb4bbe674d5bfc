import json
import math

import numpy as np
import pytest

import persurv


def ring_image():
    img = np.zeros((5, 5), dtype=np.uint8)
    img[1:4, 1:4] = 1
    img[2, 2] = 0
    return img


def test_sedt_signs_and_values():
    field = persurv.sedt3(ring_image())
    assert field.shape == (5, 5)
    assert field[2, 2] == 1.0
    assert field[1, 1] == -1.0
    assert field[0, 0] == pytest.approx(math.sqrt(2.0))
    img = ring_image()
    img[0, 0] = 2
    assert math.isinf(persurv.sedt3(img)[0, 0])


def test_ring_persistence():
    diagram = persurv.persistence(persurv.sedt3(ring_image()))
    loops = diagram[diagram[:, 0] == 1]
    assert loops.tolist() == [[1.0, -1.0, 1.0]]
    finite = persurv.filter_finite(diagram)
    assert np.isfinite(finite).all()


def test_errors_carry_codes():
    with pytest.raises(persurv.PersurvError) as err:
        persurv.sedt3(np.zeros((3, 3), dtype=np.uint8))
    assert err.value.code == "SingleClassImage"
    with pytest.raises(persurv.PersurvError) as err:
        persurv.sedt3(np.full((2, 2), 7, dtype=np.uint8))
    assert err.value.code == "InvalidLabel"


def test_surface_on_grid():
    diagram = persurv.filter_finite(persurv.persistence(persurv.sedt3(ring_image())))
    grid = persurv.shared_grid([diagram], persurv.default_padding(0.5))
    values = persurv.persistence_surface(diagram, grid, 0.5)
    assert values.shape == (len(grid),)
    assert (values >= 0).all() and values.max() > 0
    points = grid.points()
    assert (points[:, 1] >= points[:, 0]).all()


def test_fpca_invariants():
    rng = np.random.default_rng(3)
    grid = persurv.SurfaceGrid(0, 1, 0, 12)
    x = rng.normal(size=(9, 12))
    model = persurv.fit_fpca(grid, x)
    phi = model.eigenfunctions
    assert np.allclose(phi.T @ phi, np.eye(phi.shape[1]), atol=1e-10)
    assert np.allclose(model.training_scores.var(axis=0, ddof=1), model.eigenvalues, atol=1e-8)
    back = model.reconstruct(model.training_scores[0])
    assert np.allclose(back, x[0], atol=1e-8)


def test_cox_and_survival_statistics():
    ll = persurv.log_partial_likelihood([1, 2, 3], [True, True, True], np.array([[0.3], [-1.0], [2.0]]), [0.0])
    assert ll == pytest.approx(-math.log(6.0), abs=1e-15)
    rng = np.random.default_rng(5)
    z = rng.normal(size=(60, 1))
    t = rng.exponential(1.0 / np.exp(0.8 * z[:, 0]))
    fit = persurv.fit_cox(t.tolist(), [True] * 60, z)
    assert fit["converged"]
    assert 0.2 < fit["coefficients"][0] < 1.6

    km = persurv.kaplan_meier([1, 2, 3], [True, False, True])
    assert km["survival"] == [2.0 / 3.0, 0.0]
    lr = persurv.log_rank([1, 2, 3, 1, 2, 3], [True] * 6, [True, True, True, False, False, False])
    assert lr["statistic"] == 0.0
    assert persurv.chi_square_sf(9.4877, 4) == pytest.approx(0.05, abs=1e-4)
    groups = persurv.assign_risk_groups([5.0] * 7, [f"p{i}" for i in range(7)])
    assert sum(groups) == 3


def write_study(tmp_path):
    rows = ["patient_id,time,event,age"]
    manifest = ["patient_id,image_path"]
    rng = np.random.default_rng(11)
    for i in range(6):
        pid = f"P{i}"
        img = np.zeros((16, 16), dtype=np.uint8)
        for _ in range(3 + i % 3):
            y, x = rng.integers(0, 13, size=2)
            img[y : y + 3, x : x + 3] = 1
        img[1:6, 9:14] = 1
        if i % 2:
            img[3, 11] = 0
        img[15, 0] = 2
        path = tmp_path / f"{pid}.csv"
        path.write_text("\n".join(",".join(str(v) for v in row) for row in img) + "\n")
        manifest.append(f"{pid},{path.name}")
        rows.append(f"{pid},{1 + i * 0.7 + (i % 3)},{int(i != 4)},{50 + 3 * i - (i % 2) * 7}")
    (tmp_path / "manifest.csv").write_text("\n".join(manifest) + "\n")
    (tmp_path / "survival.csv").write_text("\n".join(rows) + "\n")
    config = {
        "manifest": "manifest.csv",
        "survival": "survival.csv",
        "sigma0": 0.5,
        "sigma1": 0.5,
        "selection": {"aic": {"q_max": 1, "r_max": 1}},
        "seed": 3,
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    return tmp_path / "config.json"


def test_run_study_report(tmp_path):
    config = write_study(tmp_path)
    report = persurv.run_study(str(config), out_dir=str(tmp_path / "out"))
    assert report["data"]["n_patients"] == 6
    assert len(report["risk_scores"]) == 6
    assert (tmp_path / "out" / "report.json").exists()
    again = persurv.run_study(str(config))
    assert json.dumps(again, sort_keys=True) == json.dumps(report, sort_keys=True)
