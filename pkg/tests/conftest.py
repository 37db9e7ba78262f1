import pytest

from chmm import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_c" not in nodeid:
                continue
            if rep.when != "call" and rep.passed:
                continue
            num = int(nodeid.split("::test_c")[1][:2])
            detail = dict(rep.user_properties).get("result", "")
            status = "PASS" if rep.passed else "FAIL"
            if num not in rows or status == "FAIL":
                rows[num] = (status, detail)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(rows):
        status, detail = rows[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {detail}")
    terminalreporter.write_line("criterion 15: NOT COVERED  theoretical results with no executable content")
