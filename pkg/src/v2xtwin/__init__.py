"""Desk-scale digital twin for mmWave V2I beam management.

Dynamic scene model, image-method ray tracer with knife-edge diffraction,
MIMO channel synthesis with DFT codebooks, and blockage-handover search
policies (exhaustive, 5G NR gradient, twin-aided), driven by a
frame-by-frame simulation harness.
"""

__version__ = "0.1.0"
