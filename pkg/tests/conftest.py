import time

import pytest


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """Generate the synthetic demo once and run the full pipeline twice.

    Shared by the pipeline tests and the end-to-end acceptance criteria.
    """
    from atlas.config import load_config
    from atlas.demo import generate_demo
    from atlas.pipeline import run_all

    root = tmp_path_factory.mktemp("demo")
    summary = generate_demo(root, seed=42)

    config_a = load_config(root / "config.toml")
    started = time.monotonic()
    counts = run_all(config_a)
    elapsed = time.monotonic() - started

    config_b = load_config(root / "config.toml")
    config_b.out_dir = "out_b"
    run_all(config_b)

    return {
        "root": root,
        "summary": summary,
        "counts": counts,
        "elapsed_s": elapsed,
        "out_a": root / "out",
        "out_b": root / "out_b",
    }
