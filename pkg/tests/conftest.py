_VERDICTS: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    cid, title = marker.args
    if call.excinfo is None:
        _VERDICTS.setdefault(cid, ("PASS", title))
    else:
        _VERDICTS[cid] = ("FAIL", title)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_VERDICTS, key=lambda c: int(c[1:])):
        verdict, title = _VERDICTS[cid]
        terminalreporter.write_line(f"{cid} {verdict}: {title}")
