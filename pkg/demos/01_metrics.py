"""
Scoring captions against several references
===========================================

Each clip has a handful of human captions. A candidate is scored against all
of them at once, and scores are pooled over the corpus.
"""

from audiocap import EvalInstance, evaluate_corpus, spider_combine
from audiocap.metrics import IdfStats, cider_d_sentence
from audiocap.textproc import normalize_and_tokenize as tok

references = {
    "dog.wav": ["A dog barks loudly.", "A dog is barking nearby", "Dog barking in the distance"],
    "rain.wav": ["Rain falls on a tin roof", "Heavy rain on the roof", "Rain is falling steadily"],
    "car.wav": ["A car drives past", "A car passes by quickly", "Cars drive by on a road"],
}
candidates = {
    "dog.wav": "a dog is barking",
    "rain.wav": "rain falls on the roof",
    "car.wav": "birds chirp in the background",
}

corpus = [EvalInstance(tok(candidates[k]), [tok(r) for r in refs]) for k, refs in references.items()]

###############################################################################
# The full report. ``spider`` only appears once a SPICE score is supplied,
# because SPICE itself needs a scene-graph parser we do not ship.

print(evaluate_corpus(corpus).to_text())
print(evaluate_corpus(corpus, external_spice=0.12).to_text())

###############################################################################
# CIDEr-D weights n-grams by how rare they are across reference sets. A
# word that shows up for every clip earns nothing.

stats = IdfStats([inst.references for inst in corpus])
for words in (["a"], ["rain"], ["roof"]):
    print(words, "idf =", round(stats.idf(tuple(words)), 4))

for cand in ("rain falls on the roof", "rain rain rain", "a dog is barking"):
    score = cider_d_sentence(tok(cand), corpus[1].references, stats)
    print(f"{cand!r:28} vs rain references: {score:.3f}")

###############################################################################
# SPIDEr is the plain midpoint of CIDEr and SPICE.

print(spider_combine(0.476, 0.134))
