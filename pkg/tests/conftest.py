import pytest

from pclf import CrossDomainDataset, RatingTriple


@pytest.fixture
def tiny_dataset():
    """Two domains, handful of triples, levels 1..5."""
    triples = [
        RatingTriple(0, 0, 0, 5),
        RatingTriple(0, 0, 1, 3),
        RatingTriple(0, 1, 0, 1),
        RatingTriple(0, 2, 1, 4),
        RatingTriple(1, 0, 0, 2),
        RatingTriple(1, 1, 1, 5),
        RatingTriple(1, 1, 2, 3),
    ]
    return CrossDomainDataset.from_indexed(
        n_levels=5, triples=triples, n_users=[3, 2], n_items=[2, 3]
    )


def random_dataset(rng, dims, n_per_domain):
    """Random triples covering at least one rating per domain."""
    triples = []
    for z in range(dims.n_domains):
        for _ in range(n_per_domain):
            triples.append(RatingTriple(
                z,
                int(rng.integers(dims.n_users[z])),
                int(rng.integers(dims.n_items[z])),
                int(rng.integers(1, dims.n_levels + 1)),
            ))
    # from_indexed tolerates duplicate cells; the model does not care
    return CrossDomainDataset.from_indexed(
        n_levels=dims.n_levels,
        triples=triples,
        n_users=list(dims.n_users),
        n_items=list(dims.n_items),
    )
