import numpy as np
import pytest

from paretopic.corpus import BowDocument, Corpus, Vocabulary

# Filled in by test_acceptance.py; printed after the run so the one-line
# verdicts survive pytest's output capture.
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[num]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {verdict} - {detail}")

PLANTED_V = 200
PLANTED_T = 5
PLANTED_BLOCK = 40
PLANTED_DOC_LEN = 6000
PLANTED_ZIPF = 1.5


def planted_corpus(seed: int, n_docs: int, doc_len: int = PLANTED_DOC_LEN,
                   dirichlet_alpha: float = 0.1, zipf: float = PLANTED_ZIPF):
    """Synthetic corpus with 5 planted topics over 40-word disjoint blocks.

    Documents draw a Dirichlet(0.1) topic mixture and sample doc_len tokens
    from the mixture of topic-word distributions; each topic puts all its
    mass on its own 40-word block, Zipf-skewed within the block so documents
    carry a few dominant words like natural text. The label is the dominant
    mixture component.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{i:03d}" for i in range(PLANTED_V)]
    within = np.arange(1.0, PLANTED_BLOCK + 1.0) ** -zipf
    within /= within.sum()
    topic_word = np.zeros((PLANTED_T, PLANTED_V))
    for t in range(PLANTED_T):
        topic_word[t, t * PLANTED_BLOCK:(t + 1) * PLANTED_BLOCK] = within
    docs = []
    for _ in range(n_docs):
        theta = rng.dirichlet([dirichlet_alpha] * PLANTED_T)
        mix = theta @ topic_word
        counts = rng.multinomial(doc_len, mix)
        docs.append(BowDocument(
            counts={int(w): int(c) for w, c in enumerate(counts) if c},
            label=int(theta.argmax())))
    vocab = Vocabulary(words=words, df=[n_docs] * PLANTED_V)
    return Corpus(documents=docs, vocabulary=vocab)


def block_of(word_index: int) -> int:
    return word_index // PLANTED_BLOCK


@pytest.fixture(scope="session")
def tiny_texts():
    return [
        "apple banana apple fruit market",
        "banana fruit smoothie recipe kitchen",
        "rocket launch orbit satellite space",
        "orbit satellite mission space telescope",
        "market price trade economy fruit",
        "telescope mirror space discovery launch",
    ]
