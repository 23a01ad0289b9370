"""Cross-lingual masked-LM pre-training objectives on synthetic cipher corpora."""

from camlmlab._core import (
    __version__,
    cli_main,
    encoder_gradcheck,
    gelu,
    gen_corpora,
    mask_matrix,
    masked_softmax,
    retrieval_eval,
)

__all__ = [
    "__version__",
    "cli_main",
    "encoder_gradcheck",
    "gelu",
    "gen_corpora",
    "mask_matrix",
    "masked_softmax",
    "retrieval_eval",
]
