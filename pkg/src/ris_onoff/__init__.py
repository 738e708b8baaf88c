"""Energy-efficiency optimization for RIS-aided uplinks with element on-off control.

Subpackages by role:

- numerics: complex Hermitian eigendecomposition, PSD projection, HPD solves
- scenario: reproducible channel / power problem instances
- models: SINR, rate, power, energy efficiency, constraint residuals
- fp_core: Dinkelbach ratio and quadratic-transform auxiliaries
- mmse: closed-form receive beamformers
- power_alloc: KKT transmit-power updates with subgradient duals
- reflect: lifted SCA solver for phases, on-off bits, and amplification
- planner: closed-form element-count configuration plus brute-force oracle
- ao: alternating-optimization drivers for both RIS types and baselines
- cli: command-line harness (gen / solve / plan / sweep)
"""

__version__ = "0.1.0"
