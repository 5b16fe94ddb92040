import numpy as np

from sweepsim.seeding import (generator, map_replicates, replicate_seed, replicate_sequences,
                              seed_fingerprints)


def test_replicate_seed_matches_spawn():
    kids = replicate_sequences(99, 5)
    for i, kid in enumerate(kids):
        a = generator(kid).random(4)
        b = generator(replicate_seed(99, i)).random(4)
        assert np.array_equal(a, b)


def test_streams_differ_and_masters_differ():
    assert replicate_seed(1, 0).generate_state(2).tolist() != \
        replicate_seed(1, 1).generate_state(2).tolist()
    assert replicate_seed(1, 0).generate_state(2).tolist() != \
        replicate_seed(2, 0).generate_state(2).tolist()


def _square(x):
    return x * x


def test_map_replicates_keeps_order():
    args = list(range(17))
    assert map_replicates(_square, args, 1) == [x * x for x in args]
    assert map_replicates(_square, args, 2) == [x * x for x in args]


def test_fingerprints_small_scan():
    fp = seed_fingerprints(7, 10_000)
    assert len(np.unique(fp)) == 10_000


def test_no_collisions_across_a_million_replicates():
    # 64-bit fingerprints: a chance collision at 1e6 draws has odds near 3e-8
    fp = seed_fingerprints(12345, 1_000_000)
    assert len(np.unique(fp)) == fp.size
