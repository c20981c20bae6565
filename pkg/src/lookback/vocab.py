"""Closed word-level vocabulary for the story templates."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

from .causal_model import UNKNOWN

CHARACTERS: tuple[str, ...] = (
    "Aaron", "Abigail", "Adam", "Alice", "Amber", "Amy", "Andrew", "Angela", "Anna", "Anthony",
    "Ava", "Barbara", "Ben", "Beth", "Bob", "Brandon", "Brian", "Caleb", "Carla", "Carlos",
    "Carol", "Charles", "Chloe", "Chris", "Claire", "Daniel", "David", "Diana", "Dylan", "Edward",
    "Elena", "Eli", "Emily", "Emma", "Eric", "Ethan", "Eva", "Felix", "Fiona", "Frank",
    "Gabriel", "Grace", "Greg", "Hannah", "Harry", "Helen", "Henry", "Ian", "Isaac", "Isabel",
    "Jack", "Jacob", "James", "Jane", "Jason", "Jenna", "Jessica", "John", "Jordan", "Julia",
    "Karen", "Kate", "Kevin", "Kyle", "Laura", "Leo", "Liam", "Linda", "Lisa", "Lucas",
    "Lucy", "Mark", "Mary", "Max", "Megan", "Mia", "Michael", "Nancy", "Nathan", "Nina",
    "Noah", "Olivia", "Oscar", "Paul", "Peter", "Rachel", "Rebecca", "Robert", "Ruby", "Ryan",
    "Sam", "Sarah", "Scott", "Sophia", "Steven", "Susan", "Thomas", "Tim", "Tom", "Victor",
    "Wendy", "William", "Zoe",
)

OBJECTS: tuple[str, ...] = (
    "bottle", "cup", "jar", "flute", "mug", "glass", "pitcher", "jug", "flask", "tumbler",
    "goblet", "bowl", "carafe", "decanter", "canteen", "thermos", "kettle", "teapot", "chalice",
    "beaker", "vial",
)

STATES: tuple[str, ...] = (
    "beer", "coffee", "tea", "water", "soda", "juice", "milk", "wine", "lemonade", "cocoa",
    "cider", "punch", "smoothie", "espresso", "latte", "kombucha", "sake", "whiskey", "vodka",
    "rum", "gin", "champagne", "broth",
)

BOS = "<bos>"
PAD = "<pad>"

FUNCTION_WORDS: tuple[str, ...] = (
    BOS, PAD, "and", ",", "are", "working", "in", "a", "busy", "restaurant", ".",
    "To", "complete", "an", "order", "grabs", "opaque", "fills", "it", "with",
    "Then", "another", "Finally", "can", "cannot", "observe", "'s", "actions",
    "Question", ":", "What", "does", "believe", "the", "contains", "?", "Answer",
)


@dataclass(frozen=True)
class Vocab:
    characters: tuple[str, ...] = CHARACTERS
    objects: tuple[str, ...] = OBJECTS
    states: tuple[str, ...] = STATES
    function_words: tuple[str, ...] = FUNCTION_WORDS

    @cached_property
    def tokens(self) -> tuple[str, ...]:
        return self.function_words + self.characters + self.objects + self.states

    @cached_property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    @cached_property
    def answers(self) -> tuple[str, ...]:
        """Output labels: every state token, then UNKNOWN."""
        return self.states + (UNKNOWN,)

    @cached_property
    def answer_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.answers)}

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self) -> None:
        toks = self.tokens
        if len(set(toks)) != len(toks):
            raise ValueError("vocabulary tokens must be unique across role lists")


DEFAULT_VOCAB = Vocab()
