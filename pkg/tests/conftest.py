import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo acceptance verdicts after capture ends.

    The acceptance tests print their PASS/FAIL lines as they run, but pytest
    swallows stdout of passing tests; repeating the collected lines here keeps
    one visible verdict per criterion in every invocation.
    """
    for name in ("tests.test_acceptance", "test_acceptance"):
        mod = sys.modules.get(name)
        if mod is not None and getattr(mod, "RESULTS", None):
            terminalreporter.section("acceptance")
            for line in mod.RESULTS:
                terminalreporter.write_line(line)
            return
