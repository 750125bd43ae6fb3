"""leakscope: power side-channel leakage analysis at RTL-simulation scale.

Subpackages and modules:

- ``vcd``      VCD waveform parsing, per-cycle resampling, run-set loading
- ``metrics``  leakage metrics: Hamming models, pairwise-distance correlation
               scoring, Welch t-tests
- ``aes``      AES-128 reference workload and first-round oracle points
- ``feistel``  keyed data/address obfuscation (Feistel + LFSR re-keying)
- ``sim``      batch pipeline/cache simulator producing waveforms and traces
- ``cpa``      correlation power analysis harness with key ranking and MTD
- ``cli``      command-line front end
"""

__version__ = "0.1.0"
