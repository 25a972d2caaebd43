"""Values produced by ``python3 tests/oracles.py`` and frozen here.

Regenerate only when a fixture constant in ``oracles.py`` changes.
"""

ADAMW_ONE_STEP = -9.999999900000002e-05
WILCOXON_N5_ALL_POSITIVE = 0.0625
GAT_NODES = [
    [0.009590320460860155, 0.403021497559564, 0.31767980198931917, 0.20404374623098914],
    [0.19486994854160294, 0.21602631736696248, 0.09168858380906088, 0.26176976391833773],
]
FUSION_FUSED = [0.0, 0.0, 1.0581808630431528]
FUSION_Z = 0.6224593312018546
LSTM_H2 = -0.03315875956712536
TOY_PROB = 0.5099947978830578
TOY_UTILS_RAW = [0.20624098213399, 0.14263944125508787]
