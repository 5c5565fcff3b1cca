import subprocess
import sys

import numpy as np
import pytest

from smcsr.expression import ExpressionError, is_valid
from smcsr.generate import GenerationConfig, generate_random
from smcsr.text import format_expression


def test_single_node_bound():
    rng = np.random.default_rng(0)
    cfg = GenerationConfig(max_nodes=1)
    for _ in range(200):
        e = generate_random(cfg, 3, rng)
        assert e.n_nodes == 1 and e.nodes[0].op in ("x", "c")


def test_many_draws_are_valid():
    rng = np.random.default_rng(1)
    cfg = GenerationConfig(operator_set=("+", "-", "*"), max_nodes=20, max_depth=6)
    for _ in range(10_000):
        e = generate_random(cfg, 2, rng)
        assert is_valid(e, 2)
        assert e.n_nodes <= 20


def test_same_seed_same_expression():
    cfg = GenerationConfig(operator_set=("+", "*", "sin"))
    a = [format_expression(generate_random(cfg, 2, np.random.default_rng(9))) for _ in range(3)]
    assert len(set(a)) == 1


def test_reproducible_across_processes():
    code = ("import numpy as np;from smcsr.generate import GenerationConfig, generate_random;"
            "from smcsr.text import format_expression;"
            "rng=np.random.default_rng(42);"
            "print([format_expression(generate_random(GenerationConfig(), 3, rng)) for _ in range(20)])")
    outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                           check=True).stdout for _ in range(2)}
    assert len(outs) == 1


def test_rejects_bad_config():
    with pytest.raises(ExpressionError):
        GenerationConfig(terminal_probability=1.0)
    with pytest.raises(ExpressionError):
        GenerationConfig(operator_set=("+", "tanh"))
    with pytest.raises(ExpressionError):
        generate_random(GenerationConfig(), 0, np.random.default_rng(0))
