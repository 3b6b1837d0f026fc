"""Configuration, unit layout, teams, and origin->agent binding."""

import pytest

from pgaslite import Config, ConfigError, Runtime, UsageError, layout_units
from pgaslite.runtime import MODES


def test_config_defaults_are_valid():
    cfg = Config()
    assert cfg.mode in MODES
    assert cfg.units_per_node > cfg.agents_per_node


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        Config(nodes=0)
    with pytest.raises(ConfigError):
        Config(units_per_node=2, agents_per_node=2)  # no app unit left
    with pytest.raises(ConfigError):
        Config(agents_per_node=0)
    with pytest.raises(ConfigError):
        Config(mode="sideways")
    with pytest.raises(ConfigError):
        Config(net_bandwidth=0)
    with pytest.raises(ConfigError):
        Config(time_dilation=0)
    with pytest.raises(ConfigError):
        Config(threshold_bytes=-1)


def test_mode_alias():
    assert Config(mode="eager").mode == "eager-direct"


def test_config_from_file(tmp_path):
    path = tmp_path / "job.conf"
    path.write_text(
        "# two-node layout\n"
        "nodes = 2\n"
        "units_per_node=4   # includes the agent\n"
        "mode = deferred\n"
        "net_latency = 0.0005\n"
        "\n")
    cfg = Config.from_file(path)
    assert (cfg.nodes, cfg.units_per_node, cfg.mode) == (2, 4, "deferred")
    assert cfg.net_latency == pytest.approx(5e-4)


def test_config_from_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("warp_speed = 9\n")
    with pytest.raises(ConfigError):
        Config.from_file(path)


def test_layout_places_agents_at_high_local_ranks():
    units = layout_units(Config(nodes=2, units_per_node=3, agents_per_node=1))
    ranks = [(u.rank, u.node, u.is_agent) for u in units]
    assert ranks == [(0, 0, False), (1, 0, False), (2, 0, True),
                     (3, 1, False), (4, 1, False), (5, 1, True)]


def test_runtime_team_excludes_agents():
    rt = Runtime(Config(nodes=2, units_per_node=3, agents_per_node=1))
    try:
        team = rt.team_all
        assert [u.rank for u in team.members] == [0, 1, 3, 4]
        assert all(not u.is_agent for u in team.members)
        assert team.size == 4
        assert team.rank_of(rt.unit(3)) == 2
        assert rt.unit(2) not in team
    finally:
        rt.finalize()


def test_agent_binding_partitions_apps_evenly():
    # Four application units over two agents on one node: {0,1}->4, {2,3}->5.
    rt = Runtime(Config(nodes=1, units_per_node=6, agents_per_node=2))
    try:
        binding = {r: rt.agent_of(rt.unit(r)).rank for r in range(4)}
        assert binding == {0: 4, 1: 4, 2: 5, 3: 5}
        with pytest.raises(UsageError):
            rt.agent_of(rt.unit(4))
    finally:
        rt.finalize()


def test_agent_binding_uneven_split():
    # Five apps over two agents: the first agent takes the extra origin.
    rt = Runtime(Config(nodes=1, units_per_node=7, agents_per_node=2))
    try:
        binding = {r: rt.agent_of(rt.unit(r)).rank for r in range(5)}
        assert binding == {0: 5, 1: 5, 2: 5, 3: 6, 4: 6}
    finally:
        rt.finalize()


def test_run_returns_results_in_team_order():
    rt = Runtime(Config(nodes=2, units_per_node=3))
    try:
        out = rt.run(lambda _rt, unit: unit.rank)
        assert out == [0, 1, 3, 4]
    finally:
        rt.finalize()


def test_context_manager_finalizes():
    with Runtime(Config(nodes=1, units_per_node=2)) as rt:
        rt.run(lambda _rt, unit: unit.rank)
    acks = rt.transport.transcript.count(kind="EXIT_ACK")
    assert acks == 1
