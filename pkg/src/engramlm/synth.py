"""Synthetic first-order Markov corpora over a small syllable-like id range.

Used for paired baseline-vs-memory experiments: the transition structure is
exactly the kind of local statistic the n-gram table can absorb, so the
benefit of the memory layer shows up within a few hundred steps at desk
scale.
"""

from __future__ import annotations

import numpy as np

N_SPECIALS = 5  # ids 0..4 reserved to mirror the tokenizer's specials


def markov_chain(n_states: int = 64, branching: int = 4, seed: int = 0) -> np.ndarray:
    """Row-stochastic (n_states, n_states) transition matrix where each state
    moves to `branching` successors with Dirichlet weights."""
    rng = np.random.default_rng((seed, "chain"))
    trans = np.zeros((n_states, n_states))
    for s in range(n_states):
        succ = rng.choice(n_states, size=branching, replace=False)
        w = rng.dirichlet(np.full(branching, 0.6))
        trans[s, succ] = w
    return trans


def sample_corpus(
    trans: np.ndarray,
    n_docs: int,
    doc_len: int,
    seed: int = 0,
    id_offset: int = N_SPECIALS,
) -> list[np.ndarray]:
    """Documents of token ids offset past the reserved specials."""
    rng = np.random.default_rng((seed, "docs"))
    n_states = trans.shape[0]
    docs = []
    for _ in range(n_docs):
        state = int(rng.integers(n_states))
        ids = np.empty(doc_len, dtype=np.int64)
        for t in range(doc_len):
            ids[t] = state + id_offset
            state = int(rng.choice(n_states, p=trans[state]))
        docs.append(ids)
    return docs


def chain_entropy(trans: np.ndarray) -> float:
    """Entropy rate (nats/token) under the stationary distribution; the loss
    floor a perfect model converges to."""
    evals, evecs = np.linalg.eig(trans.T)
    k = int(np.argmin(np.abs(evals - 1.0)))
    pi = np.real(evecs[:, k])
    pi = np.abs(pi) / np.abs(pi).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = np.where(trans > 0, np.log(trans), 0.0)
    return float(-(pi[:, None] * trans * logt).sum())
