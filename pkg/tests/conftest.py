import pytest

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record one acceptance verdict; call before asserting so failures are reported too."""
    number = int(request.node.name.split("_")[1][1:])

    def record(passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE][number] = line
        print(line)
        return passed

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and rep.failed and item.module.__name__.endswith("test_acceptance"):
        number = int(item.name.split("_")[1][1:])
        results = item.config.stash[ACCEPTANCE]
        if number not in results:
            results[number] = f"criterion {number:2d}: FAIL  {call.excinfo.typename}: {call.excinfo.value}"


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[ACCEPTANCE]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
