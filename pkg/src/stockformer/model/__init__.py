from .attention import AttentionOutput, full_attention, probsparse_attention, sample_count
from .checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from .lstm import LSTMBaselineConfig, LSTMModel, lstm_forward
from .stockformer import (
    ModelConfig,
    StockformerModel,
    distill,
    positional_encode,
    positional_encoding,
    stockformer_forward,
)
