import copy

from certshare.example import GOLDEN, build_table, deviations, format_intervals


def test_table_matches_golden(running_net):
    table = build_table(running_net)
    assert deviations(table) == []
    assert table["T1'"]["contains h1(x5)"] is True
    assert table["T2"]["verified"] is False


def test_deviations_report_changed_cells(running_net):
    golden = copy.deepcopy(GOLDEN)
    golden["T1'"]["N"] = ((2.5, 6.0), (-1.75, 2.25))
    golden["x1"]["verified"] = False
    bad = deviations(build_table(running_net), golden)
    assert sorted((r, c) for r, c, _, _ in bad) == [("T1'", "N"), ("x1", "verified")]


def test_format_intervals():
    assert format_intervals(((0.0, 2.5), (-1.0, 1.0))) == "([0,2.5], [-1,1])"
    assert format_intervals(True) == "yes"
