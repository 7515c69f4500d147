"""Mobile MIMO channel prediction: a learned spatial-gradient field integrated
as an ODE from stored static channels, plus positioning and Doppler handling."""

__version__ = "0.1.0"
