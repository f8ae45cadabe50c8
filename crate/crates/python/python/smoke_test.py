"""Smoke test for the napinn_py extension module."""

import math
import sys
import tempfile

import napinn_py as nx


def main() -> int:
    s = nx.Scenario(2)
    traj = nx.simulate(s, dt=0.01)
    depths = traj.depths
    print(f"emulator: {len(traj)} records to t = {traj.times[-1]:.1f} s ({traj.termination})")
    m0 = s.total_mass(depths[0])
    drift = max(abs(s.total_mass(h) - m0) / m0 for h in depths)
    assert drift < 1e-10, drift
    assert all(v >= 0.0 for row in traj.velocities for v in row)

    v, n = nx.velocity_fixed_point(0.0, 0.0, 0.0, 2.0, nx.Scenario(2), dt=0.1)
    assert n >= 1 and v > 0.0

    assert nx.TrainingConfig.preset("vanilla-2").total_params() == 334467
    assert nx.TrainingConfig.preset("napinn-2").total_params() == 347907

    cfg = nx.TrainingConfig(2, "node_assigned")
    cfg.epochs = 20
    cfg.n_collocation = 50
    cfg.hidden_layers = 2
    cfg.hidden_width = 16
    model = nx.train(cfg, s)
    history = model.loss_history()
    assert len(history) == 20 and all(math.isfinite(r["total"]) for r in history)

    grid = model.grid()
    pred = model.predict(grid)
    assert pred.depths[0] == [2.0, 0.0]
    reference = nx.simulate(s, t_end=model.t_max, stop_on_equalization=False)
    report = nx.compare(pred, reference, grid)
    print(f"20-epoch model: H MAE {report['height_mae']:.4f}, V MAE {report['velocity_mae']:.4f}")

    with tempfile.TemporaryDirectory() as d:
        model.save(d)
        again = nx.Model.load(d)
        assert again.predict(grid).depths == pred.depths

    try:
        nx.simulate(s, max_iterations=1)
    except nx.NonConvergenceError as e:
        print(f"non-convergence surfaced: {e}")
    else:
        raise AssertionError("expected NonConvergenceError")

    print("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
