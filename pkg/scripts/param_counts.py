"""Print the parameter counts of the full-size networks."""
from odechan.baselines import LstmBaselineConfig
from odechan.nn_core import count_params
from odechan.positioning import PositionerConfig
from odechan.scgnet import ScgnetConfig

if __name__ == "__main__":
    rows = [
        ("SCGnet (64 x 64)", ScgnetConfig()),
        ("positioner, column per cell", PositionerConfig()),
        ("positioner, full matrix per cell", PositionerConfig(input_mode="full_matrix_per_cell")),
        ("LSTM predictor (384 hidden)", LstmBaselineConfig()),
    ]
    for name, cfg in rows:
        print(f"{name:34s} {count_params(cfg):>12,d}")
