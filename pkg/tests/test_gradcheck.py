import pytest

from depthpose.gradcheck import build_cases, format_report, run_gradcheck


@pytest.fixture(scope="module")
def default_run():
    return run_gradcheck()


def test_default_instance_passes(default_run):
    passed, results = default_run
    assert passed, "\n".join(format_report(results))
    names = {n for n, _ in results}
    assert names == {"supervised", "smoothness", "mask_reg", "photometric", "total_direct", "total_toycnn"}


def test_every_parameter_block_is_checked(default_run):
    _, results = default_run
    cases = {c.name: c for c in build_cases()}
    for name, rep in results:
        assert {b.name for b in rep.blocks} == set(cases[name].params.names())
        assert all(b.n_checked > 0 for b in rep.blocks)


def test_report_lines(default_run):
    lines = format_report(default_run[1])
    assert any(line.startswith("PASS photometric:tangent: checked=6 ") for line in lines)


def test_planted_bug_is_caught():
    passed, results = run_gradcheck(planted_bug=True)
    assert not passed
    assert all(not rep.passed for _, rep in results)
    assert any(line.startswith("FAIL") for line in format_report(results))
