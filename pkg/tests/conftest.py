import hypothesis
import pytest

from bridgecause.harness import field_test_fixture

hypothesis.settings.register_profile("default", deadline=None, max_examples=100)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def field_fixture():
    return field_test_fixture()


@pytest.fixture(scope="session")
def field_files(field_fixture, tmp_path_factory):
    from bridgecause.diagnosis import DEFAULT_RULES, dump_rules

    out = tmp_path_factory.mktemp("field")
    paths = field_fixture.write(out)
    paths["rules"] = out / "rules.yaml"
    paths["rules"].write_text(dump_rules(DEFAULT_RULES))
    return paths


acceptance_key = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash.setdefault(acceptance_key, [])

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(acceptance_key, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
