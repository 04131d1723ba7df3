"""Tests for scenario parsing and the bundled scenarios."""

import pytest

from errors import ConfigError
from models.scenario import RunMode, bundled_scenarios, load_scenario, parse_scenario
from tools.reporting import LINK_ORDER, paper_net_rate_khz

MINIMAL = """
name = test link
link.length_km = 22   # km
"""


class TestParse:
    def test_minimal_document(self):
        scenario = parse_scenario(MINIMAL)
        assert scenario.name == "test link"
        assert scenario.run.params.fiber.length_km == 22.0
        assert scenario.run.n_pulses_total == 10_000_000
        assert scenario.run.mode is RunMode.SINGLE_PROCESS

    def test_visibility_sets_optical_qber(self):
        scenario = parse_scenario(MINIMAL + "link.visibility = 0.997\n")
        assert scenario.run.params.qber_opt == pytest.approx(0.0015)

    def test_dead_time_in_microseconds(self):
        scenario = parse_scenario(MINIMAL + "detector.dead_time_us = 4\n")
        assert scenario.run.params.dead_time_s == pytest.approx(4e-6)

    def test_anchors(self):
        scenario = parse_scenario(MINIMAL + "eve.anchors = 0:0.0, 10:0.2\n")
        assert scenario.run.eve.i2nu_anchors == ((0.0, 0.0), (10.0, 0.2))

    def test_networked_mode(self):
        assert parse_scenario(MINIMAL + "run.mode = networked\n").run.mode is RunMode.NETWORKED

    @pytest.mark.parametrize("extra, message", [
        ("link.colour = blue\n", "unknown key"),
        ("link.length_km = 30\n", "duplicate key"),
        ("source.mu = lots\n", "invalid value"),
        ("no equals sign\n", "expected key = value"),
        ("run.paper_compat = maybe\n", "invalid value"),
    ])
    def test_rejected_lines(self, extra, message):
        with pytest.raises(ConfigError, match=message):
            parse_scenario(MINIMAL + extra, source="x.conf")

    def test_error_carries_line_number(self):
        with pytest.raises(ConfigError, match="x.conf:4"):
            parse_scenario(MINIMAL + "bogus = 1\n", source="x.conf")

    def test_missing_name(self):
        with pytest.raises(ConfigError, match="name"):
            parse_scenario("link.length_km = 22\n")

    def test_missing_length(self):
        with pytest.raises(ConfigError, match="length_km"):
            parse_scenario("name = x\n")

    def test_out_of_range_value(self):
        with pytest.raises(ConfigError):
            parse_scenario(MINIMAL + "run.sample_fraction = 2\n")

    def test_dead_time_limit(self):
        with pytest.raises(ConfigError):
            parse_scenario(MINIMAL + "detector.dead_time_us = 20\n")

    def test_config_errors_exit_with_validation_code(self):
        with pytest.raises(ConfigError) as info:
            parse_scenario("")
        assert info.value.exit_code == 2


class TestBundled:
    def test_seven_links(self):
        assert sorted(bundled_scenarios()) == sorted(LINK_ORDER)

    def test_unknown_name(self):
        with pytest.raises(ConfigError, match="bundled"):
            load_scenario("geneva_to_mars")

    def test_load_by_path(self):
        path = bundled_scenarios()["ste_croix_a"]
        assert load_scenario(path) == load_scenario("ste_croix_a")

    def test_lake_link(self):
        scenario = load_scenario("geneva_nyon_lake")
        assert scenario.run.params.fiber.loss_db == pytest.approx(4.8)
        assert scenario.run.params.dead_time_s == pytest.approx(4e-6)
        assert scenario.paper.r_net_khz == pytest.approx(1.51)

    @pytest.mark.parametrize("name", LINK_ORDER)
    def test_published_net_rate_recomputed(self, name):
        scenario = load_scenario(name)
        assert paper_net_rate_khz(scenario) == pytest.approx(scenario.paper.r_net_khz, rel=0.10)
