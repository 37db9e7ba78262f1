from chmm.datasets import concat_ab_generator
from chmm.learning import EmConfig
from chmm.splitting import greedy_split_demo


def test_single_splits_gain_nothing_joint_split_gains():
    report = greedy_split_demo(concat_ab_generator(5000, seed=1), EmConfig(max_iters=200, rel_tol=1e-10), restarts=2)
    assert set(report.gains) == {"(", ")", "a", "b", "ab"}
    for sym, gain in report.single_gains().items():
        assert gain <= 1e-4, sym
    assert report.joint_gain >= 0.01
    assert report.n_symbols == 5000
