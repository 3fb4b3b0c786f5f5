"""Quick end-to-end check of the quadsec extension module."""

import math
import pathlib
import sys
import tempfile

import quadsec

ROOT = pathlib.Path(__file__).resolve().parents[3]


def main():
    s = quadsec.Scenario("smoke", 3.0)
    s.seed = 7
    res = s.run()
    rep = res.report()
    assert not res.diverged and not res.crashed, rep
    assert res.final_position_error < 0.05, res.final_position_error
    assert quadsec.report_from_telemetry(res.telemetry()) == rep

    eng = quadsec.Engine(quadsec.Scenario("step", 5.0))
    eng.run_until(1.0)
    assert abs(eng.time - 1.0) < 1e-9, eng.time
    eff = eng.inject({"source": "gcs", "command": {"kind": "DO_REPOSITION", "position": [2.0, 0.0, -5.0]}})
    assert eff["effect"] == "guided_target", eff
    eng.run_until(5.0)
    x = eng.truth()["position"][0]
    assert 1.5 < x < 2.5, x
    assert eng.param("ATC_RAT_RLL_P") > 0
    eng.set_param("ATC_RAT_RLL_P", 0.2)
    assert any('"param_change"' in line for line in eng.telemetry())
    out = eng.finish()
    assert out.report()["metrics"]["last_time"] >= 4.99

    q = quadsec.euler_to_quat([0.1, -0.2, 0.3])
    e = quadsec.quat_to_euler(q)
    assert all(abs(a - b) < 1e-12 for a, b in zip(e, [0.1, -0.2, 0.3])), e
    assert abs(quadsec.wrap_pi(3 * math.pi) - math.pi) < 1e-12

    with tempfile.TemporaryDirectory() as d:
        code, csv = quadsec.run_batch(str(ROOT / "scenarios"), jobs=2, out_dir=d)
        assert code == 0, csv
        assert csv.startswith("file,name"), csv

    try:
        quadsec.Scenario.from_toml("name = 'x'\nduration = -1\n")
    except ValueError:
        pass
    else:
        raise AssertionError("negative duration accepted")

    print("smoke test ok")


if __name__ == "__main__":
    sys.exit(main())
