import numpy as np
import pytest

from skelpore import biology as bio, partition as pt, scenario as scn
from skelpore.errors import InputOutputError, ScenarioError

BASE = """\
[scenario]
version = 1
seed = 7

[diffusion]
D_c = 2.0
dt = 0.5
duration = 5
"""


def test_minimal_scenario():
    s = scn.parse_scenario(BASE)
    assert (s.D_c, s.dt, s.duration, s.alpha, s.seed) == (2.0, 0.5, 5.0, 0.35, 7)
    assert not s.calibrate and not s.biology_enabled
    assert s.placement("dom").kind == "none"
    assert s.diffusion().alpha == 0.35


def test_units_conversion():
    s = scn.parse_scenario(BASE.replace("D_c = 2.0", "D_c = 6.73e-6\nD_units = cm2/s")
                           .replace("dt = 0.5", "dt = 0.01\ntime_units = d"))
    assert s.D_c == pytest.approx(2.4228e6, rel=1e-12)
    assert s.dt == pytest.approx(0.24) and s.duration == 120.0


def test_calibrate_alpha():
    s = scn.parse_scenario(BASE + "alpha = calibrate\n[initial]\ndom = planes 0,1 1.0\n")
    assert s.calibrate and s.alpha is None
    with pytest.raises(ScenarioError):
        s.diffusion()
    assert s.diffusion(0.4).alpha == 0.4
    ps = s.plane_scenario()
    assert ps.source_planes == (0, 1) and ps.mass == 1.0


def test_plane_scenario_needs_plane_placement():
    with pytest.raises(ScenarioError):
        scn.parse_scenario(BASE).plane_scenario()


def line_of(text, fragment):
    return next(i for i, l in enumerate(text.splitlines(), 1) if fragment in l)


@pytest.mark.parametrize("bad, fragment", [
    ("dt = 0.5", "dt = -1"),
    ("dt = 0.5", "dt = fast"),
    ("duration = 5", "duration = 5\nalpha = 1.4"),
    ("duration = 5", "duration = 5\nwidth = 3"),
    ("duration = 5", "duration = 5\nD_units = m2/s"),
])
def test_errors_name_the_line(bad, fragment):
    text = BASE.replace(bad, fragment)
    with pytest.raises(ScenarioError) as exc:
        scn.parse_scenario(text)
    expected = line_of(text, fragment.splitlines()[-1])
    assert exc.value.line == expected
    assert str(exc.value).startswith(f"line {expected}: ")


@pytest.mark.parametrize("directive", [
    "dom = sprinkle 3", "dom = uniform", "dom = uniform lots", "dom = planes 0,x 1", "dom = regions 0 1",
    "dom = random-spots 0 1", "dom = uniform -1", "dom = planes 60 1",
])
def test_bad_placements(directive):
    text = BASE + "[initial]\n" + directive + "\n"
    with pytest.raises(ScenarioError) as exc:
        scn.parse_scenario(text)
    assert exc.value.line == line_of(text, directive)


def test_structure_errors():
    with pytest.raises(ScenarioError, match="unknown section"):
        scn.parse_scenario(BASE + "[extras]\nx = 1\n")
    with pytest.raises(ScenarioError, match="version"):
        scn.parse_scenario(BASE.replace("version = 1", "version = 2"))
    with pytest.raises(ScenarioError, match="duplicate"):
        scn.parse_scenario(BASE + "dt = 1\n")
    with pytest.raises(ScenarioError):
        scn.parse_scenario("dt = 1\n" + BASE)
    with pytest.raises(ScenarioError, match="D_c"):
        scn.parse_scenario(BASE.replace("D_c = 2.0\n", ""))
    with pytest.raises(ScenarioError) as exc:
        scn.parse_scenario(BASE + "[biology]\np_return = 2\n")
    assert exc.value.line == 10


def test_template_round_trip():
    s = scn.parse_scenario(scn.default_scenario_text())
    assert s.biology == bio.BioParams() and s.biology_enabled
    assert s.D_c == pytest.approx(2.4228e6) and s.dt == 0.24 and s.duration == 120.0
    assert s.placement("biomass").describe() == "random-spots 1000 0.18"
    d = scn.parse_scenario(scn.default_scenario_text(biology=False))
    assert not d.biology_enabled and d.placement("biomass").kind == "none"


def test_as_dict_is_plain():
    import json
    s = scn.parse_scenario(scn.default_scenario_text())
    assert json.loads(json.dumps(s.as_dict()))["placements"]["dom"] == "uniform 289.5"


def test_load_missing_file(tmp_path):
    with pytest.raises(InputOutputError):
        scn.load_scenario(tmp_path / "none.ini")


def test_initial_state_placements():
    lab = np.repeat(np.arange(1, 5), 2).astype(np.uint32).reshape(-1, 1, 1)
    part = pt.Partition.from_label_image(lab, (1, 1, 1))
    text = BASE + ("[profile]\naxis = x\nn_planes = 8\n[initial]\ndom = planes 0,1 4.0\nbiomass = random-spots 2 1.0\n"
                   "pom = largest-regions 1 3.0\nsom = regions 2,3 2.0\n")
    s = scn.parse_scenario(text)
    st = scn.initial_state(s, part.volume, part)
    assert st.dom.tolist() == [4.0, 0.0, 0.0, 0.0]
    assert st.bio.sum() == pytest.approx(1.0) and np.count_nonzero(st.bio) == 2
    assert st.pom.tolist() == [3.0, 0.0, 0.0, 0.0]
    assert st.som.tolist() == [0.0, 1.0, 1.0, 0.0]
    again = scn.initial_state(s, part.volume, part)
    assert np.array_equal(again.bio, st.bio)
    with pytest.raises(ScenarioError):
        scn.initial_state(s, part.volume, None)
