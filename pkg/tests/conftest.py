import pytest

from trafficprofile.synth import PlantedEffect, SynthSpec, synth_generate


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Twenty subjects with a domain effect on gender."""
    spec = SynthSpec(20, (15, 25), [PlantedEffect("gender", "Male", "domain", 0.5)], seed=11)
    return synth_generate(spec, tmp_path_factory.mktemp("corpus"))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
