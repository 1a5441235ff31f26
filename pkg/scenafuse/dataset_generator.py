"""
Synthetic scenario-NLI benchmark.

Premises describe an agent doing something and never say where. Most
hypotheses are decided by the text alone (restatement, negation, an extra
unverifiable detail). Ambiguous hypotheses add a location word: they are
entailed when the scenario's landmark agrees with it and contradicted
otherwise. Every ambiguous text pair is emitted twice, once with each
location, so a scenario-blind model can get at most half of them right.
"""
import json
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass

from .Config import apply_values, read_config_file, write_config_file
from .Errors import ConfigurationError, DimensionError, FormatError
from .Metrics import CONTRADICTION, ENTAILMENT, LABELS, NEUTRAL
from .Scenario import COLORS, DISTRACTOR_CLASSES, LOCATIONS, ScenarioGrid
from .Vocabulary import Vocabulary

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")

AGENTS = ["people", "children", "men", "women", "players", "friends"]
ACTIONS = [("play", "ball"), ("eat", "lunch"), ("read", "books"),
           ("sing", "songs"), ("ride", "bikes"), ("paint", "pictures")]
DETAILS = ["together", "happily", "today", "quickly"]
LOCATION_WORDS = {"outdoor": "outside", "indoor": "inside"}
WORD_LOCATIONS = {word: location for location, word in LOCATION_WORDS.items()}

# chance that a distractor cell holds a visible object
PRESENT_RATE = 0.8


@dataclass(frozen=True)
class GeneratorConfig:
    """
    Split sizes, ambiguity rate, class balance targets and template choice
    """
    train : int = 2000
    dev : int = 400
    test : int = 400
    ambiguous_fraction : float = 0.5
    entailment_target : float = 1 / 3
    neutral_target : float = 1 / 3
    contradiction_target : float = 1 / 3
    grid_size : int = 3
    agents : int = len(AGENTS)
    actions : int = len(ACTIONS)
    seed : int = 0

    def __post_init__(self):
        if min(self.train, self.dev, self.test) < 0:
            raise ConfigurationError("split sizes must be non-negative")
        if not 0.0 <= self.ambiguous_fraction <= 1.0:
            raise ConfigurationError(f"ambiguous_fraction must lie in [0, 1], got {self.ambiguous_fraction}")
        targets = (self.entailment_target, self.neutral_target, self.contradiction_target)
        if min(targets) < 0 or abs(sum(targets) - 1.0) > 1e-6:
            raise ConfigurationError(f"class targets must be non-negative and sum to 1, got {targets}")
        if not 1 <= self.agents <= len(AGENTS) or not 1 <= self.actions <= len(ACTIONS):
            raise ConfigurationError(f"agents must lie in [1, {len(AGENTS)}] and actions in [1, {len(ACTIONS)}]")
        if self.grid_size < 1:
            raise ConfigurationError(f"grid_size must be positive, got {self.grid_size}")

    def split_size(self, split : str) -> int:
        return getattr(self, split)


@dataclass(frozen=True)
class ScenarioNLIExample:
    premise : tuple
    hypothesis : tuple
    scenario : ScenarioGrid
    label : int
    ambiguous : bool
    split : str

    @property
    def text(self) -> tuple:
        return self.premise, self.hypothesis

    def __str__(self):
        return f"[{self.split}] {' '.join(self.premise)} / {' '.join(self.hypothesis)} -> {LABELS[self.label]}"


# ---------------------------------------------------------------------------
# Rule table
# ---------------------------------------------------------------------------

def is_ambiguous(premise, hypothesis) -> bool:
    """True when the hypothesis is the premise plus a location word"""
    premise, hypothesis = list(premise), list(hypothesis)
    return len(hypothesis) == len(premise) + 1 and hypothesis[:-1] == premise and hypothesis[-1] in WORD_LOCATIONS


def label_for(premise, hypothesis, grid : ScenarioGrid) -> int:
    """
    The generator's rule table: label of a (premise, hypothesis, scenario) triple

    :param premise: [agent, verb, object]
    :param hypothesis: One of the hypothesis templates built on that premise
    :param grid: Scenario; only its location matters, and only for location hypotheses
    """
    premise, hypothesis = list(premise), list(hypothesis)
    if len(premise) != 3:
        raise FormatError(f"premise {premise} is not [agent, verb, object]")
    agent, verb, obj = premise
    if hypothesis == premise or hypothesis == ["some"] + premise:
        return ENTAILMENT
    if hypothesis == [agent, "do", "not", verb, obj] or hypothesis == ["nobody", verb, obj]:
        return CONTRADICTION
    if hypothesis[:-1] == premise and hypothesis[-1] in DETAILS:
        return NEUTRAL
    if is_ambiguous(premise, hypothesis):
        if grid.location is None:
            return NEUTRAL
        return ENTAILMENT if grid.location == WORD_LOCATIONS[hypothesis[-1]] else CONTRADICTION
    raise FormatError(f"hypothesis {hypothesis} follows no template for premise {premise}")


def flip_location(grid : ScenarioGrid) -> ScenarioGrid:
    """The same grid seen in the other location"""
    if grid.location is None:
        raise DimensionError("grid has no landmark to flip")
    other = next(location for location in LOCATIONS if location != grid.location)
    return grid.with_location(other)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def random_grid(rng : random.Random, size : int, location : str | None = None) -> ScenarioGrid:
    """
    One landmark cell at a random position, every other cell a distractor
    """
    location = location or rng.choice(sorted(LOCATIONS))
    landmark = rng.randrange(size * size)
    cells = []
    for i in range(size * size):
        if i == landmark:
            cells.append((LOCATIONS[location], rng.randrange(len(COLORS)), 1))
        else:
            cells.append((rng.choice(DISTRACTOR_CLASSES), rng.randrange(len(COLORS)),
                          int(rng.random() < PRESENT_RATE)))
    return ScenarioGrid(size, tuple(cells))


def _premise(rng : random.Random, cfg : GeneratorConfig) -> list[str]:
    verb, obj = rng.choice(ACTIONS[:cfg.actions])
    return [rng.choice(AGENTS[:cfg.agents]), verb, obj]


def _hypothesis(rng : random.Random, premise : list[str], label : int) -> list[str]:
    agent, verb, obj = premise
    if label == ENTAILMENT:
        return rng.choice([list(premise), ["some"] + premise])
    if label == CONTRADICTION:
        return rng.choice([[agent, "do", "not", verb, obj], ["nobody", verb, obj]])
    return premise + [rng.choice(DETAILS)]


def class_plan(n : int, cfg : GeneratorConfig) -> dict[str, int]:
    """
    Example counts of one split: ambiguous pairs and unambiguous examples per class

    :raise ConfigurationError: when the class targets cannot hold the ambiguous share
    """
    ambiguous = 2 * round(cfg.ambiguous_fraction * n / 2)
    entailment = round(cfg.entailment_target * n)
    neutral = round(cfg.neutral_target * n)
    contradiction = n - entailment - neutral
    plan = {
        "ambiguous_pairs": ambiguous // 2,
        "entailment": entailment - ambiguous // 2,
        "neutral": neutral,
        "contradiction": contradiction - ambiguous // 2,
    }
    if min(plan.values()) < 0:
        raise ConfigurationError(f"class targets cannot be met with {ambiguous} ambiguous examples out of {n}: {plan}")
    return plan


def generate_dataset(cfg : GeneratorConfig = GeneratorConfig()) -> list[ScenarioNLIExample]:
    """
    Generate every split; identical configurations give identical datasets

    :param cfg: Generator configuration
    :type cfg: GeneratorConfig
    """
    rng = random.Random(cfg.seed)
    used = set()
    dataset = []

    def fresh_grid(premise, hypothesis, location=None):
        while True:
            grid = random_grid(rng, cfg.grid_size, location)
            if (premise, hypothesis, grid) not in used:
                return grid

    for split in SPLITS:
        plan = class_plan(cfg.split_size(split), cfg)
        examples = []
        for _ in range(plan["ambiguous_pairs"]):
            premise = _premise(rng, cfg)
            hypothesis = tuple(premise + [rng.choice(sorted(WORD_LOCATIONS))])
            premise = tuple(premise)
            first = fresh_grid(premise, hypothesis)
            second = flip_location(first)
            while (premise, hypothesis, second) in used:
                first = fresh_grid(premise, hypothesis)
                second = flip_location(first)
            for grid in (first, second):
                used.add((premise, hypothesis, grid))
                examples.append(ScenarioNLIExample(premise, hypothesis, grid,
                                                   label_for(premise, hypothesis, grid), True, split))
        for label, name in ((ENTAILMENT, "entailment"), (NEUTRAL, "neutral"), (CONTRADICTION, "contradiction")):
            for _ in range(plan[name]):
                premise = _premise(rng, cfg)
                hypothesis = tuple(_hypothesis(rng, premise, label))
                premise = tuple(premise)
                grid = fresh_grid(premise, hypothesis)
                used.add((premise, hypothesis, grid))
                examples.append(ScenarioNLIExample(premise, hypothesis, grid, label, False, split))
        rng.shuffle(examples)
        dataset.extend(examples)
        logger.debug("generated %d %s examples (%s)", len(examples), split, plan)
    return dataset


def text_only_bayes_accuracy(dataset : list[ScenarioNLIExample]) -> float:
    """
    Best accuracy of any scenario-blind predictor: the majority label of each
    text pair, weighted by how often the pair occurs
    """
    if not dataset:
        return 0.0
    by_text = defaultdict(Counter)
    for example in dataset:
        by_text[example.text][example.label] += 1
    return sum(max(counts.values()) for counts in by_text.values()) / len(dataset)


def split_examples(dataset : list[ScenarioNLIExample], split : str) -> list[ScenarioNLIExample]:
    return [e for e in dataset if e.split == split]


def build_vocabulary(dataset : list[ScenarioNLIExample]) -> Vocabulary:
    return Vocabulary.build(token for e in dataset for token in e.premise + e.hypothesis)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def example_to_record(example : ScenarioNLIExample) -> dict:
    return {
        "premise": " ".join(example.premise),
        "hypothesis": " ".join(example.hypothesis),
        "grid": {"G": example.scenario.size, "cells": [list(cell) for cell in example.scenario.cells]},
        "label": example.label,
        "ambiguous": example.ambiguous,
        "split": example.split,
    }


def record_to_example(record : dict, line : int | None = None) -> ScenarioNLIExample:
    """
    :raise FormatError: naming the line when a field is missing or invalid
    """
    try:
        premise = tuple(record["premise"].split())
        hypothesis = tuple(record["hypothesis"].split())
        grid = ScenarioGrid(int(record["grid"]["G"]), tuple(tuple(cell) for cell in record["grid"]["cells"]))
        label, ambiguous, split = record["label"], record["ambiguous"], record["split"]
    except KeyError as error:
        raise FormatError(f"missing field {error.args[0]!r}", line=line) from error
    except (TypeError, AttributeError, ValueError, DimensionError) as error:
        raise FormatError(f"invalid record: {error}", line=line) from error
    if not isinstance(label, int) or isinstance(label, bool) or not 0 <= label < len(LABELS):
        raise FormatError(f"label must be an integer in [0, {len(LABELS)}), got {label!r}", line=line)
    if not isinstance(ambiguous, bool):
        raise FormatError(f"ambiguous must be a boolean, got {ambiguous!r}", line=line)
    if split not in SPLITS:
        raise FormatError(f"split must be one of {SPLITS}, got {split!r}", line=line)
    if not premise or not hypothesis:
        raise FormatError("empty premise or hypothesis", line=line)
    return ScenarioNLIExample(premise, hypothesis, grid, label, ambiguous, split)


def write_dataset(path, dataset : list[ScenarioNLIExample]):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for example in dataset:
            f.write(json.dumps(example_to_record(example), separators=(",", ":")) + "\n")


def read_dataset(path) -> list[ScenarioNLIExample]:
    """
    Parse a line-delimited JSON dataset

    :param path: File written by write_dataset
    """
    dataset = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as error:
                raise FormatError(f"not valid JSON: {error.msg}", line=number) from error
            if not isinstance(record, dict):
                raise FormatError("expected a JSON object", line=number)
            dataset.append(record_to_example(record, number))
    return dataset


def write_generator_config(path, cfg : GeneratorConfig):
    write_config_file(path, cfg)


def read_generator_config(path) -> GeneratorConfig:
    return apply_values(GeneratorConfig(), read_config_file(path))
