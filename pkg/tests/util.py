"""Shared test data: case-study fixtures and randomized KB generators."""

from __future__ import annotations

import random
import string

from deeprefine.kb import KnowledgeBase, Triple

# Canonical repair blocks exercising every operator and quote dialect.
COREF_BLOCK = (
    "replace_node(`the girl's phone number', `Samantha's phone number')"
    "|insert_edge(`James', `received', `Samantha's phone number')|"
)

RUNNER_UP_BLOCK = (
    "delete_edge(`American Idol (season 3)', `runner-up', `Kree Harrison') | "
    "insert_edge(`American Idol (season 3)', `runner-up', `Diana DeGarmo') | "
    "insert_edge(`Diana DeGarmo', `runner-up of', `American Idol (season 3)')"
)

DISAMBIG_BLOCK = (
    "insert_edge(`Modern Husbands', `directed-by', `Luis Bayón Herrera')"
    "|insert_edge(`The Fighting Vigilantes', `directed-by', `Ray Taylor')"
    "|insert_edge(`Modern Husbands', `released-on', `1948-01-01')"
    "|insert_edge(`The Fighting Vigilantes', `released-on', `1947-11-15')"
    "|replace_node(`Ray Taylor', `Ray Taylor (1888-12-01 to 1952-02-15)')|"
)

# The disambiguation case's query-related subgraph.
DISAMBIG_TRIPLES = [
    Triple('"Fighting with Buffalo Bill"', "was directed by", "Ray Taylor"),
    Triple("Modern Husbands", "starring", "Olinda Bozán"),
    Triple("Ray Taylor", "debut film", '"Fighting with Buffalo Bill"'),
    Triple("Ray Taylor", "directed", "159 films"),
    Triple("Ray Taylor", "lived from", "1888-12-01 to 1952-02-15"),
    Triple("Ray Taylor", "was a", "American film director"),
]

RUNNER_UP_TRIPLES = [
    Triple("American Idol (season 3)", "winner", "Fantasia Barrino"),
    Triple("American Idol (season 3)", "runner-up", "Kree Harrison"),
    Triple("Kree Harrison", "took runner-up spot", "American Idol"),
]


def random_word(rng: random.Random, length: int = 5) -> str:
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(length))


def random_triple(rng: random.Random, n_items: int = 12, n_relations: int = 6) -> Triple:
    return Triple(
        head=f"item{rng.randrange(n_items)}",
        relation=f"rel{rng.randrange(n_relations)}",
        tail=f"item{rng.randrange(n_items)}",
    )


def random_kb(rng: random.Random, n_triples: int, n_items: int = 12,
              n_relations: int = 6) -> KnowledgeBase:
    kb = KnowledgeBase()
    while len(kb) < n_triples:
        kb.insert_triple(random_triple(rng, n_items, n_relations))
    return kb


def chain_kb(labels: list[str], relation: str = "linked to") -> KnowledgeBase:
    kb = KnowledgeBase()
    for a, b in zip(labels, labels[1:]):
        kb.insert_triple(Triple(a, relation, b))
    return kb
