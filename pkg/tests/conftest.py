import pytest

from hit import RunConfig


def tiny(**overrides) -> RunConfig:
    """A config small enough for a whole run to take well under a second."""
    base = dict(
        num_pairs=24,
        latent_dim=4,
        input_dim=6,
        tokens_per_expert=2,
        batch_size=4,
        bank_size_video=8,
        bank_size_text=8,
        epochs=2,
        video_layers=1,
        text_layers=1,
        video_hidden=8,
        text_hidden=8,
        video_intermediate=8,
        text_intermediate=8,
        video_heads=2,
        text_heads=2,
        proj_hidden=8,
        out_dim=4,
        max_words=8,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def tiny_config():
    return tiny


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
