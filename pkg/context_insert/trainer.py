from typing import Sequence

from loguru import logger

from .config import DEFAULT_INSERTABLE, TOP_CONTEXT, TOP_RELATIONS
from .corpus_stats import CorpusAccumulator, SceneGraphRecord, TripleSamples, select_vocabulary
from .gmm import FitConfig, GmmModel, fit_em_traced
from .scorer import ContextModel, ScoringConfig
from .workers import run_bounded


def _fit_triple(samples: TripleSamples, config: FitConfig) -> GmmModel:
    result = fit_em_traced(samples.as_array(), config)
    logger.debug(
        f"Fitted {samples.key}: n={len(samples.features)} K={result.model.k} "
        f"iterations={result.n_iter} mean loglik={result.mean_loglik:.4f}"
    )
    return result.model


def train_model(
    corpus: Sequence[SceneGraphRecord],
    *,
    insertable: Sequence[str] = DEFAULT_INSERTABLE,
    top_context: int = TOP_CONTEXT,
    top_relations: int = TOP_RELATIONS,
    fit_config: FitConfig = FitConfig(),
    scoring: ScoringConfig = ScoringConfig(),
    threads: int = 1,
) -> ContextModel:
    vocab = select_vocabulary(corpus, insertable, top_context, top_relations)
    accumulator = CorpusAccumulator(vocab).add_all(corpus)
    counts = accumulator.counts()
    samples = accumulator.samples()
    logger.info(f"Fitting {len(samples)} triples with {threads} workers")

    fitted = run_bounded(
        lambda item: _fit_triple(item, fit_config),
        samples.values(),
        threads,
        label="Fitting mixtures",
    )
    gmms = dict(zip(samples.keys(), fitted))
    return ContextModel(vocab=vocab, counts=counts, gmms=gmms, fit_config=fit_config, scoring=scoring)


__all__ = ["train_model"]
