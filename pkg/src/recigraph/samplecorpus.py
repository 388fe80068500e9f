"""Deterministic synthetic recipe corpus.

Builds the same ~570-recipe corpus on every call (fixed internal seed).
Each dietary tag draws from a single dish family whose recipes share a
small ingredient core plus most of a common extras pool, and secondary
tags come from the same family's tag group; the resulting dense,
well-overlapped per-tag vocabularies keep constrained-question sampling
satisfiable under rejection sampling.  Every recipe carries the full
nutrient panel.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .kg_store import KnowledgeGraph, ingest_corpus

__all__ = ["build_sample_records", "build_sample_graph", "write_sample_corpus"]

_SEED = 0x5EED_C0DE


@dataclass(frozen=True)
class _Family:
    name: str
    bases: tuple[str, ...]
    core: tuple[str, ...]
    extras: tuple[str, ...]
    nutrition: dict[str, float]
    oven: bool


_FAMILIES = (
    _Family(
        name="quickbread",
        bases=(
            "Banana Bread",
            "Zucchini Loaf",
            "Cornbread",
            "Pumpkin Bread",
            "Oat Muffins",
            "Apple Loaf",
        ),
        core=("flour", "sugar", "eggs", "butter"),
        extras=(
            "baking soda",
            "vanilla extract",
            "salt",
            "milk",
            "banana",
            "ground cinnamon",
            "walnuts",
            "raisins",
            "apple",
            "lemon zest",
            "rolled oats",
            "honey",
            "yogurt",
            "cream cheese",
        ),
        nutrition={
            "calories": 320,
            "fat_calories": 110,
            "protein": 6,
            "sugar": 28,
            "fiber": 2,
            "carbohydrates": 48,
            "sodium": 0.4,
            "cholesterol": 0.35,
            "saturated_fat": 6,
            "total_fat": 13,
            "calcium": 80,
            "salt_per_100g": 0.5,
            "sugars_per_100g": 18,
        },
        oven=True,
    ),
    _Family(
        name="soup",
        bases=(
            "Lentil Soup",
            "Minestrone",
            "Tomato Bisque",
            "Harvest Stew",
            "Split Pea Soup",
            "Barley Stew",
        ),
        core=("onions", "garlic", "olive oil", "vegetable broth"),
        extras=(
            "carrots",
            "celery",
            "salt",
            "black pepper",
            "lentils",
            "tomato paste",
            "potatoes",
            "kale",
            "thyme",
            "bay leaf",
            "cumin",
            "chickpeas",
            "rice",
            "green onions",
        ),
        nutrition={
            "calories": 180,
            "fat_calories": 50,
            "protein": 9,
            "sugar": 6,
            "fiber": 5,
            "carbohydrates": 24,
            "sodium": 0.8,
            "cholesterol": 0.25,
            "saturated_fat": 2,
            "total_fat": 6,
            "calcium": 60,
            "salt_per_100g": 0.7,
            "sugars_per_100g": 3,
        },
        oven=False,
    ),
    _Family(
        name="pasta",
        bases=(
            "Pasta Primavera",
            "Penne Bake",
            "Spaghetti Toss",
            "Orzo Skillet",
            "Baked Ziti",
            "Fettuccine Bowl",
        ),
        core=("pasta", "olive oil", "garlic", "salt"),
        extras=(
            "parmesan cheese",
            "black pepper",
            "basil",
            "tomato paste",
            "mushrooms",
            "spinach",
            "cherry tomatoes",
            "cream",
            "zucchini",
            "red pepper flakes",
            "pine nuts",
            "frozen peas",
            "margarine",
            "breadcrumbs",
        ),
        nutrition={
            "calories": 420,
            "fat_calories": 130,
            "protein": 14,
            "sugar": 5,
            "fiber": 4,
            "carbohydrates": 58,
            "sodium": 0.6,
            "cholesterol": 0.3,
            "saturated_fat": 5,
            "total_fat": 15,
            "calcium": 150,
            "salt_per_100g": 0.6,
            "sugars_per_100g": 3.5,
        },
        oven=False,
    ),
    _Family(
        name="salad",
        bases=(
            "Garden Salad",
            "Quinoa Bowl",
            "Chopped Salad",
            "Grain Salad",
            "Cucumber Salad",
            "Kale Crunch Salad",
        ),
        core=("lettuce", "olive oil", "lemon juice", "salt"),
        extras=(
            "black pepper",
            "cucumber",
            "garlic",
            "feta cheese",
            "tomatoes",
            "red onion",
            "avocado",
            "chickpeas",
            "quinoa",
            "sunflower seeds",
            "dill",
            "mint",
            "green onions",
            "honey",
        ),
        nutrition={
            "calories": 160,
            "fat_calories": 80,
            "protein": 5,
            "sugar": 4,
            "fiber": 4,
            "carbohydrates": 12,
            "sodium": 0.3,
            "cholesterol": 0.2,
            "saturated_fat": 2,
            "total_fat": 9,
            "calcium": 70,
            "salt_per_100g": 0.35,
            "sugars_per_100g": 3,
        },
        oven=False,
    ),
    _Family(
        name="stirfry",
        bases=(
            "Vegetable Stir Fry",
            "Tofu Skillet",
            "Fried Rice",
            "Ginger Noodles",
            "Sesame Bowl",
            "Pepper Saute",
        ),
        core=("soy sauce", "garlic", "ginger", "sesame oil"),
        extras=(
            "rice",
            "green onions",
            "vegetable oil",
            "salt",
            "broccoli",
            "tofu",
            "bell pepper",
            "snap peas",
            "carrots",
            "mushrooms",
            "cashews",
            "chili pepper",
            "frozen peas",
            "vinegar",
        ),
        nutrition={
            "calories": 280,
            "fat_calories": 90,
            "protein": 12,
            "sugar": 7,
            "fiber": 4,
            "carbohydrates": 34,
            "sodium": 1.0,
            "cholesterol": 0.22,
            "saturated_fat": 2.5,
            "total_fat": 10,
            "calcium": 60,
            "salt_per_100g": 0.9,
            "sugars_per_100g": 5,
        },
        oven=False,
    ),
    _Family(
        name="casserole",
        bases=(
            "Sweet Potato Casserole",
            "Broccoli Bake",
            "Rice Gratin",
            "Mushroom Casserole",
            "Cheddar Strata",
            "Potato Gratin",
        ),
        core=("butter", "flour", "milk", "cheddar cheese"),
        extras=(
            "salt",
            "black pepper",
            "breadcrumbs",
            "sweet potato",
            "frozen peas",
            "ground nutmeg",
            "onions",
            "mushrooms",
            "rice",
            "broccoli",
            "shredded cheddar cheese",
            "margarine",
            "baking soda",
            "green onions",
        ),
        nutrition={
            "calories": 380,
            "fat_calories": 150,
            "protein": 13,
            "sugar": 6,
            "fiber": 3,
            "carbohydrates": 38,
            "sodium": 0.7,
            "cholesterol": 0.45,
            "saturated_fat": 8,
            "total_fat": 17,
            "calcium": 220,
            "salt_per_100g": 0.65,
            "sugars_per_100g": 4.5,
        },
        oven=True,
    ),
    _Family(
        name="dessert",
        bases=(
            "Fudge Brownies",
            "Praline Bars",
            "Apricot Crumble",
            "Sugar Cookies",
            "Chocolate Torte",
            "Pecan Blondies",
        ),
        core=("sugar", "butter", "eggs", "vanilla extract"),
        extras=(
            "flour",
            "salt",
            "cocoa powder",
            "chocolate chips",
            "pecans",
            "ground cinnamon",
            "cream",
            "apricots",
            "brown sugar",
            "sweet rice flour",
            "shredded coconut",
            "orange zest",
            "milk",
            "honey",
        ),
        nutrition={
            "calories": 450,
            "fat_calories": 180,
            "protein": 5,
            "sugar": 40,
            "fiber": 1.5,
            "carbohydrates": 55,
            "sodium": 0.25,
            "cholesterol": 0.5,
            "saturated_fat": 10,
            "total_fat": 20,
            "calcium": 50,
            "salt_per_100g": 0.3,
            "sugars_per_100g": 30,
        },
        oven=True,
    ),
    _Family(
        name="grill",
        bases=(
            "Grilled Vegetables",
            "Roasted Medley",
            "Charred Skewers",
            "Sheet Pan Roast",
            "Smoky Eggplant",
            "Herb Roast",
        ),
        core=("olive oil", "salt", "black pepper", "garlic"),
        extras=(
            "lemon juice",
            "rosemary",
            "zucchini",
            "eggplant",
            "bell pepper",
            "sweet potato",
            "corn",
            "thyme",
            "paprika",
            "honey",
            "mushrooms",
            "onions",
            "red onion",
            "vinegar",
        ),
        nutrition={
            "calories": 220,
            "fat_calories": 100,
            "protein": 16,
            "sugar": 3,
            "fiber": 2.5,
            "carbohydrates": 10,
            "sodium": 0.45,
            "cholesterol": 0.3,
            "saturated_fat": 3,
            "total_fat": 11,
            "calcium": 40,
            "salt_per_100g": 0.5,
            "sugars_per_100g": 2,
        },
        oven=True,
    ),
)

_FAMILY_BY_NAME = {f.name: f for f in _FAMILIES}

_TAG_QUOTAS = (
    ("vegetarian", 70),
    ("low-carb", 62),
    ("low-sodium", 60),
    ("low-fat", 55),
    ("low-cholesterol", 50),
    ("vegan", 45),
    ("low-protein", 45),
    ("gluten-free", 35),
    ("egg-free", 30),
    ("lactose", 28),
    ("high-protein", 25),
    ("high-calcium", 28),
    ("nut-free", 16),
    ("high-fiber", 14),
    ("dairy-free", 12),
)

# one family per tag; secondary tags come from the same family's group
_TAG_FAMILY = {
    "vegetarian": "pasta",
    "nut-free": "pasta",
    "egg-free": "pasta",
    "low-fat": "soup",
    "dairy-free": "soup",
    "lactose": "soup",
    "low-carb": "grill",
    "high-protein": "grill",
    "gluten-free": "grill",
    "vegan": "salad",
    "high-fiber": "salad",
    "low-sodium": "quickbread",
    "low-cholesterol": "stirfry",
    "low-protein": "dessert",
    "high-calcium": "casserole",
}

_TAG_FRIENDS = {
    "vegetarian": ("nut-free", "egg-free"),
    "nut-free": ("vegetarian", "egg-free"),
    "egg-free": ("vegetarian", "nut-free"),
    "low-fat": ("dairy-free", "lactose"),
    "dairy-free": ("low-fat", "lactose"),
    "lactose": ("low-fat", "dairy-free"),
    "low-carb": ("high-protein", "gluten-free"),
    "high-protein": ("low-carb", "gluten-free"),
    "gluten-free": ("low-carb", "high-protein"),
    "vegan": ("high-fiber",),
    "high-fiber": ("vegan",),
    "low-sodium": (),
    "low-cholesterol": (),
    "low-protein": (),
    "high-calcium": (),
}

# multiplier applied to a nutrient for every recipe carrying the tag
_TAG_NUTRITION = {
    "low-fat": {"total_fat": 0.3, "saturated_fat": 0.3, "fat_calories": 0.3},
    "low-carb": {"carbohydrates": 0.35, "sugar": 0.4, "sugars_per_100g": 0.4},
    "low-sodium": {"sodium": 0.25, "salt_per_100g": 0.25},
    "low-cholesterol": {"cholesterol": 0.2},
    "low-protein": {"protein": 0.4},
    "high-protein": {"protein": 2.5},
    "high-calcium": {"calcium": 3.0},
    "high-fiber": {"fiber": 2.8},
    "vegan": {"cholesterol": 0.12},
    "vegetarian": {"cholesterol": 0.5},
}

_PREFIXES = (
    "",
    "Classic",
    "Quick",
    "Rustic",
    "Golden",
    "Sunday",
    "Harvest",
    "Creamy",
    "Smoky",
    "Spiced",
    "Garden",
    "Winter",
    "Summer",
)

_SUFFIXES = (
    "",
    "with Herbs",
    "with Praline Topping",
    "for Two",
    "Family Style",
    "Weeknight Version",
)


def _title_decks(rng: random.Random) -> dict[str, list[str]]:
    decks: dict[str, list[str]] = {}
    for family in _FAMILIES:
        combos = [
            " ".join(part for part in (prefix, base, suffix) if part)
            for base in family.bases
            for prefix in _PREFIXES
            for suffix in _SUFFIXES
        ]
        rng.shuffle(combos)
        decks[family.name] = combos
    return decks


def _instructions(rng: random.Random, family: _Family, ingredients: list[str]) -> list[str]:
    picks = rng.sample(ingredients, 4)
    steps = [
        f"Preheat the oven to {rng.choice((325, 350, 375, 400))} degrees."
        if family.oven
        else f"Warm the {picks[0]} in a large pan over medium heat.",
        f"Combine the {picks[1]} and {picks[2]} in a large bowl.",
        f"Stir in the {picks[3]} until evenly mixed.",
    ]
    if family.oven:
        steps.append(f"Bake for {rng.choice((20, 25, 30, 35, 40))} minutes.")
    else:
        steps.append(f"Cook for {rng.choice((8, 10, 12, 15, 18))} minutes, stirring often.")
    if rng.random() < 0.7:
        steps.append("Season to taste and serve warm.")
    return steps


def _nutrition(rng: random.Random, family: _Family, tags: list[str]) -> dict[str, float]:
    values: dict[str, float] = {}
    for name, base in family.nutrition.items():
        scale = rng.uniform(0.8, 1.2)
        for tag in tags:
            scale *= _TAG_NUTRITION.get(tag, {}).get(name, 1.0)
        values[name] = round(base * scale, 3)
    return values


def build_sample_records() -> list[dict]:
    """The full corpus as plain JSON-ready records; identical on every call."""
    rng = random.Random(_SEED)
    decks = _title_decks(rng)
    records: list[dict] = []
    counter = 0
    for tag, quota in _TAG_QUOTAS:
        family = _FAMILY_BY_NAME[_TAG_FAMILY[tag]]
        friends = _TAG_FRIENDS[tag]
        for _ in range(quota):
            counter += 1
            n_extras = rng.randint(8, 10)
            ingredients = list(family.core) + rng.sample(family.extras, n_extras)
            tags = [tag]
            if friends:
                n_secondary = rng.choice((0, 1, 1, 2))
                tags.extend(rng.sample(friends, min(n_secondary, len(friends))))
            records.append(
                {
                    "id": f"r{counter:04d}",
                    "title": decks[family.name].pop(),
                    "ingredients": ingredients,
                    "instructions": _instructions(rng, family, ingredients),
                    "nutrition": _nutrition(rng, family, tags),
                    "tags": tags,
                }
            )
    return records


def build_sample_graph() -> KnowledgeGraph:
    return ingest_corpus(build_sample_records())


def write_sample_corpus(path: str | Path) -> int:
    """Write the corpus as newline-delimited JSON; returns the record count."""
    records = build_sample_records()
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return len(records)
