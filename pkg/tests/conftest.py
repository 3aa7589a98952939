import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmtlab.masking import AnnotatedSentence, Token


def annotated(rows) -> AnnotatedSentence:
    return AnnotatedSentence(tuple(Token(*r) for r in rows))


# The three reference segments with their stated annotations (the tagger's
# output is taken verbatim, including 'casing' carrying a VERB tag).

SEGMENT_1 = annotated([
    ("simply", "simply", "ADV"), ("apply", "apply", "VERB"),
    ("the", "the", "DET"), ("cleanser", "cleanser", "NOUN"),
    ("or", "or", "CCONJ"), ("cream", "cream", "NOUN"), ("to", "to", "ADP"),
    ("your", "your", "PRON"), ("hands", "hand", "NOUN"),
    ("and", "and", "CCONJ"), ("apply", "apply", "VERB"), ("it", "it", "PRON"),
    ("to", "to", "ADP"), ("the", "the", "DET"), ("face", "face", "NOUN"),
    ("and", "and", "CCONJ"), ("begin", "begin", "VERB"),
    ("rubbing", "rub", "VERB"), (".", ".", "PUNCT")])

SEGMENT_2 = annotated([
    ("you", "you", "PRON"), ("can", "can", "AUX"), ("draw", "draw", "VERB"),
    ("it", "it", "PRON"), ("really", "really", "ADV"),
    ("lightly", "lightly", "ADV"), (",", ",", "PUNCT"), ("go", "go", "VERB"),
    ("back", "back", "ADV"), ("and", "and", "CCONJ"),
    ("erase", "erase", "VERB"), ("it", "it", "PRON"),
    ("later", "later", "ADV"), (".", ".", "PUNCT")])

SEGMENT_3 = annotated([
    ("what", "what", "PRON"), ("we", "we", "PRON"), ("are", "be", "AUX"),
    ("going", "go", "VERB"), ("to", "to", "PART"), ("be", "be", "AUX"),
    ("doing", "do", "VERB"), ("is", "be", "AUX"), ("folding", "fold", "VERB"),
    ("the", "the", "DET"), ("top", "top", "NOUN"), ("over", "over", "ADP"),
    ("and", "and", "CCONJ"), ("making", "make", "VERB"), ("a", "a", "DET"),
    ("little", "little", "ADJ"), ("casing", "case", "VERB"),
    ("the", "the", "DET"), ("ribbon", "ribbon", "NOUN"),
    ("will", "will", "AUX"), ("slip", "slip", "VERB"),
    ("through", "through", "ADP"), (".", ".", "PUNCT")])

SEGMENT_ACT_EXPECTED = [
    "simply apply the cleanser or cream to your hands and apply it to the "
    "face and begin <v> .",
    "you can <v> it really lightly , go back and erase it later .",
    "what we are going to be doing is <v> the top over and making a little "
    "casing the ribbon will <v> through .",
]

SEGMENT_ALL_EXPECTED = [
    "simply <v> the cleanser or cream to your hands and <v> it to the face "
    "and <v> <v> .",
    "you <v> <v> it really lightly , <v> back and <v> it later .",
    "what we <v> <v> to <v> <v> <v> <v> the top over and <v> a little <v> "
    "the ribbon <v> <v> through .",
]

SEGMENT_LEXICON_LABELS = ["rub", "draw", "fold", "slip", "playing+music"]


@pytest.fixture
def segments():
    return [SEGMENT_1, SEGMENT_2, SEGMENT_3]


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
