"""Independent SQuAD-style scorer used as the oracle for metric tests.

Kept deliberately separate from the package implementation: regex article
stripping, string.punctuation removal, Counter overlap — the classic recipe.
"""

import collections
import re
import string


def ref_normalize(s):
    def remove_articles(text):
        return re.sub(r"\b(a|an|the)\b", " ", text)

    def white_space_fix(text):
        return " ".join(text.split())

    def remove_punc(text):
        exclude = set(string.punctuation)
        return "".join(ch for ch in text if ch not in exclude)

    return white_space_fix(remove_articles(remove_punc(s.lower())))


def ref_exact(prediction, gold):
    return int(ref_normalize(prediction) == ref_normalize(gold))


def ref_f1(prediction, gold):
    pred_toks = ref_normalize(prediction).split()
    gold_toks = ref_normalize(gold).split()
    if len(gold_toks) == 0 or len(pred_toks) == 0:
        return int(gold_toks == pred_toks)
    common = collections.Counter(gold_toks) & collections.Counter(pred_toks)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = num_same / len(pred_toks)
    recall = num_same / len(gold_toks)
    return 2 * precision * recall / (precision + recall)


def ref_max_over_golds(metric_fn, prediction, golds):
    return max(metric_fn(prediction, g) for g in golds)
