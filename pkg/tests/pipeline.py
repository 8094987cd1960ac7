"""The full command-line pipeline, shared by the CLI and determinism tests."""

from lspnav.cli import main


def pipeline(root, seed=7, maps=3, episodes=4):
    """gen-maps -> gen-episodes -> gen-data -> train -> eval for every policy."""
    corpus, runs = root / "maps", root / "runs"
    assert main(["gen-maps", "--count", str(maps), "--seed", str(seed), "--out", str(corpus)]) == 0
    assert main(["gen-episodes", "--corpus", str(corpus), "--count", str(episodes),
                 "--seed", str(seed), "--out", str(root / "eps.jsonl")]) == 0
    assert main(["gen-data", "--corpus", str(corpus), "--episodes-per-env", "1",
                 "--seed", str(seed), "--out", str(root / "data.jsonl")]) == 0
    assert main(["train", "--data", str(root / "data.jsonl"), "--seed", str(seed),
                 "--out", str(root / "model.npz")]) == 0
    for policy in ("optimistic", "lsp-oracle", "lsp-learned"):
        assert main(["eval", "--corpus", str(corpus), "--episodes", str(root / "eps.jsonl"),
                     "--policy", policy, "--model", str(root / "model.npz"),
                     "--out", str(runs / policy)]) == 0
    assert main(["compare", "--runs", *[str(runs / p) for p in ("optimistic", "lsp-oracle",
                                                                 "lsp-learned")],
                 "--out", str(root / "table.csv")]) == 0
    return root
