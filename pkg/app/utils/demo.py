"""
Deterministic five-author demo corpus for toy end-to-end runs.

Every author gets its own vocabulary, a favourite sentence shape and a signature noun,
so both the classifier and the syntactic features have something to find. Sentences are
built as parse trees first; the sidecar therefore carries exact parses.
"""

import argparse
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
import structlog
import yaml
from nltk import Tree

from app.schemas import DEFAULT_AUTHORS
from app.services.synfeat import serialize_tree

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

START_MARKER = "*** START OF THE PROJECT GUTENBERG EBOOK DEMO ***"
END_MARKER = "*** END OF THE PROJECT GUTENBERG EBOOK DEMO ***"


@dataclass(frozen=True)
class AuthorStyle:
    names: Sequence[str]
    nouns: Sequence[str]
    adjectives: Sequence[str]
    verbs: Sequence[str]
    preps: Sequence[str]
    signature: str
    signature_rate: float
    # relative weights of simple, prepositional, chained, coordinated, reported
    shapes: Sequence[float]


STYLES: Dict[str, AuthorStyle] = {
    "Dickens": AuthorStyle(
        names=["Pip", "Scrooge", "Pickwick", "Fagin"],
        nouns=["fog", "clerk", "street", "lamp", "coach", "parlour"],
        adjectives=["gloomy", "crooked", "cheerful", "dismal"],
        verbs=["watched", "followed", "passed", "remembered"],
        preps=["through", "along", "beneath"],
        signature="fog",
        signature_rate=0.6,
        shapes=[1, 2, 1, 1, 4],
    ),
    "Austen": AuthorStyle(
        names=["Elizabeth", "Darcy", "Emma", "Marianne"],
        nouns=["sister", "ball", "letter", "estate", "fortune", "bonnet"],
        adjectives=["agreeable", "handsome", "amiable", "prudent"],
        verbs=["admired", "considered", "received", "disliked"],
        preps=["at", "for", "with"],
        signature="letter",
        signature_rate=0.6,
        shapes=[2, 1, 1, 4, 1],
    ),
    "Twain": AuthorStyle(
        names=["Huck", "Tom", "Jim", "Becky"],
        nouns=["river", "raft", "fence", "cave", "island", "dog"],
        adjectives=["lazy", "muddy", "big", "ornery"],
        verbs=["grabbed", "painted", "found", "poked"],
        preps=["on", "by", "up"],
        signature="raft",
        signature_rate=0.6,
        shapes=[5, 1, 0, 1, 1],
    ),
    "Alcott": AuthorStyle(
        names=["Jo", "Meg", "Beth", "Amy"],
        nouns=["piano", "garden", "mother", "present", "kitten", "apron"],
        adjectives=["little", "gentle", "merry", "tender"],
        verbs=["loved", "sewed", "wrapped", "carried"],
        preps=["into", "for", "near"],
        signature="mother",
        signature_rate=0.6,
        shapes=[2, 2, 0, 2, 2],
    ),
    "Melville": AuthorStyle(
        names=["Ahab", "Ishmael", "Queequeg", "Starbuck"],
        nouns=["sea", "harpoon", "deck", "mast", "captain", "ocean"],
        adjectives=["vast", "pale", "dreadful", "ancient"],
        verbs=["hunted", "sighted", "chased", "struck"],
        preps=["across", "upon", "beyond"],
        signature="whale",
        signature_rate=1.0,
        shapes=[1, 2, 5, 1, 1],
    ),
}


class _Builder:
    """Random constituents for one author."""

    def __init__(self, style: AuthorStyle, rng: np.random.Generator):
        self.style = style
        self.rng = rng

    def pick(self, words: Sequence[str]) -> str:
        return words[int(self.rng.integers(len(words)))]

    def noun_phrase(self, allow_name: bool = True, signature: bool = False) -> Tree:
        if allow_name and not signature and self.rng.random() < 0.3:
            return Tree("NP", [Tree("NNP", [self.pick(self.style.names)])])
        noun = self.style.signature if signature else self.pick(self.style.nouns)
        parts = [Tree("DT", ["the"])]
        if self.rng.random() < 0.5:
            parts.append(Tree("JJ", [self.pick(self.style.adjectives)]))
        parts.append(Tree("NN", [noun]))
        return Tree("NP", parts)

    def pp(self, signature: bool = False) -> Tree:
        return Tree("PP", [Tree("IN", [self.pick(self.style.preps)]), self.noun_phrase(signature=signature)])

    def verb(self) -> Tree:
        return Tree("VBD", [self.pick(self.style.verbs)])

    def wants_signature(self) -> bool:
        return bool(self.rng.random() < self.style.signature_rate)

    def simple(self) -> Tree:
        return Tree("S", [self.noun_phrase(), Tree("VP", [self.verb(), self.noun_phrase(signature=self.wants_signature())])])

    def prepositional(self) -> Tree:
        vp = Tree("VP", [self.verb(), self.noun_phrase(allow_name=False), self.pp(signature=self.wants_signature())])
        return Tree("S", [self.noun_phrase(), vp])

    def chained(self) -> Tree:
        inner = Tree("NP", [self.noun_phrase(allow_name=False), self.pp(signature=self.wants_signature())])
        vp = Tree("VP", [self.verb(), Tree("PP", [Tree("IN", [self.pick(self.style.preps)]), inner])])
        return Tree("S", [self.noun_phrase(), vp])

    def coordinated(self) -> Tree:
        return Tree("S", [self.simple(), Tree(",", [","]), Tree("CC", ["and"]), self.prepositional()])

    def reported(self) -> Tree:
        clause = Tree("SBAR", [Tree("IN", ["that"]), self.simple()])
        return Tree("S", [Tree("NP", [Tree("NNP", [self.pick(self.style.names)])]), Tree("VP", [Tree("VBD", ["said"]), clause])])

    def sentence(self) -> Tree:
        shapes: List[Callable[[], Tree]] = [
            self.simple, self.prepositional, self.chained, self.coordinated, self.reported
        ]
        weights = np.asarray(self.style.shapes, dtype=np.float64)
        body = shapes[int(self.rng.choice(len(shapes), p=weights / weights.sum()))]()
        body.append(Tree(".", ["."]))
        tree = Tree("ROOT", [body])
        first = tree.leaf_treeposition(0)
        tree[first] = tree[first][0].upper() + tree[first][1:]
        return tree


def render(tree: Tree) -> str:
    """Surface text of a demo tree: leaves joined by spaces, punctuation attached."""
    return " ".join(tree.leaves()).replace(" ,", ",").replace(" .", ".")


def demo_sentences(author: str, count: int, seed: int = 0) -> List[Tuple[str, str]]:
    """``count`` (text, bracketed parse) pairs for one author."""
    index = DEFAULT_AUTHORS.index(author)
    builder = _Builder(STYLES[author], np.random.default_rng(np.random.SeedSequence([seed, index])))
    pairs = []
    for _ in range(count):
        tree = builder.sentence()
        pairs.append((render(tree), serialize_tree(tree)))
    return pairs


def _document(author: str, part: int, sentences: Sequence[str], per_paragraph: int = 8) -> str:
    paragraphs = [
        " ".join(sentences[i: i + per_paragraph]) for i in range(0, len(sentences), per_paragraph)
    ]
    return "\n".join([
        f"The Project Gutenberg eBook of a {author} demo, part {part}",
        "",
        START_MARKER,
        "",
        f"CHAPTER {'I' * part}.",
        "",
        "\n\n".join(paragraphs),
        "",
        END_MARKER,
        "End of the demo text.",
        "",
    ])


def write_demo_corpus(root: PathLike, sentences_per_author: int = 400, seed: int = 0, documents: int = 2) -> Path:
    """
    Write ``<root>/raw/<Author>/part<k>.txt`` and ``<root>/parses.jsonl``.

    Returns:
        The ``raw`` folder
    """
    root = Path(root)
    raw_dir = root / "raw"
    parses: Dict[str, str] = {}
    for author in DEFAULT_AUTHORS:
        pairs = demo_sentences(author, sentences_per_author, seed)
        folder = raw_dir / author
        folder.mkdir(parents=True, exist_ok=True)
        size = -(-len(pairs) // documents)
        for part in range(documents):
            chunk = [text for text, _ in pairs[part * size: (part + 1) * size]]
            if chunk:
                (folder / f"part{part + 1}.txt").write_text(_document(author, part + 1, chunk), encoding="utf-8")
        for text, parse in pairs:
            parses.setdefault(text, parse)
    with open(root / "parses.jsonl", "w", encoding="utf-8", newline="\n") as handle:
        for text in sorted(parses):
            handle.write(json.dumps({"text": text, "parse": parses[text]}, ensure_ascii=False) + "\n")
    logger.info("Demo corpus written", path=str(root), authors=len(DEFAULT_AUTHORS), sentences=sentences_per_author)
    return raw_dir


def demo_config(out_dir: str = "runs") -> Dict[str, object]:
    """A pipeline config sized for a laptop; paths are relative to the config file."""
    return {
        "seed": 0,
        "out_dir": out_dir,
        "corpus": {"input_dir": "raw", "parses": "parses.jsonl", "test_fraction": 0.2},
        "model": {"layers": 2, "heads": 2, "embed_dim": 32, "vocab": 400, "context": 64},
        "finetune": {"epochs": 2, "batch_size": 32, "learning_rate": 3e-3, "lora": {"rank": 4, "alpha": 8.0}},
        "detector": {"epochs": 3, "patience": 2, "batch_size": 32, "learning_rate": 3e-3},
        "generate": {"per_author": 4, "max_new_tokens": 24, "seed_vocabulary_size": 20, "retry_factor": 5},
        "evaluate": {"threshold": 0.93},
        "synfeat": {"features": "all", "bins": 10, "generated_parses": "parses.jsonl"},
        "explain": {"steps": 8, "ae_generations": 5, "ig_generations": 1, "ig_sentences": 3, "top_k": 5},
    }


def write_demo(root: PathLike, sentences_per_author: int = 400, seed: int = 0) -> Path:
    """Demo corpus plus ``demo.yaml``; returns the config path."""
    root = Path(root)
    write_demo_corpus(root, sentences_per_author, seed)
    config_path = root / "demo.yaml"
    config_path.write_text(yaml.safe_dump(demo_config(), sort_keys=False), encoding="utf-8")
    return config_path


def main() -> None:
    parser = argparse.ArgumentParser(description="Write the styleforge demo corpus")
    parser.add_argument("root")
    parser.add_argument("--sentences", type=int, default=400)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    print(write_demo(args.root, args.sentences, args.seed))


if __name__ == "__main__":
    main()
