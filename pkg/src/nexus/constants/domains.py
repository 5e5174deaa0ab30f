"""
Controlled domain vocabulary for the nexus runtime.

Intents, tool manifests and skills are tagged with values from this set only.
"""

from typing import Final

DOMAINS: Final[frozenset[str]] = frozenset(
    [
        "astronomy",
        "chemistry",
        "earth_sciences",
        "life_sciences",
        "materials",
        "mathematics",
        "physics",
        "scientific_computing",
    ],
)

# Free-text spellings the intent model tends to produce.
DOMAIN_ALIASES: Final[dict[str, str]] = {
    "biology": "life_sciences",
    "bioinformatics": "life_sciences",
    "biomedicine": "life_sciences",
    "genomics": "life_sciences",
    "medicine": "life_sciences",
    "life_science": "life_sciences",
    "materials_science": "materials",
    "material_science": "materials",
    "electrochemistry": "chemistry",
    "math": "mathematics",
    "computing": "scientific_computing",
    "computation": "scientific_computing",
    "geoscience": "earth_sciences",
    "astrophysics": "astronomy",
}


def normalize_domain(tag: str) -> str | None:
    """Map a free-text tag onto the vocabulary, or ``None`` if it has no match."""
    key = "_".join(tag.strip().lower().replace("-", " ").split())
    key = DOMAIN_ALIASES.get(key, key)
    return key if key in DOMAINS else None
