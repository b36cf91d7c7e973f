from pathlib import Path

import pytest

from swinsight import datapipe


def write_config(path: Path, datasets: dict[str, Path], out: str = "run", **sections) -> Path:
    """Write an experiment config; ``sections`` maps section name to a dict of overrides."""
    model = {"preset": "swin-micro", **sections.get("model", {})}
    train = {"epochs": 2, "learning_rate": 0.001, **sections.get("train", {})}
    data = {"datasets": ", ".join(datasets), **{f"manifest.{k}": str(v) for k, v in datasets.items()}}
    data.update(sections.get("data", {}))
    lines = []
    for name, sec in (("model", model), ("train", train), ("data", data), ("output", {"dir": out})):
        lines.append(f"[{name}]")
        lines += [f"{k} = {v}" for k, v in sec.items()]
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def two_fixtures(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixtures")
    for name, seed in (("A", 1), ("B", 2)):
        datapipe.make_synthetic_fixture(root / name, 12, image_size=32, seed=seed, dataset=name)
    return root
