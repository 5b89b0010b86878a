"""Digital twin of a finger-worn soft electromagnetic tactile actuator.

Modules: ``magnetics`` (filament fields and forces), ``design_optimizer``
(force per root power and mass), ``electromech`` (lumped dynamics, thermal,
calibration), ``renderer`` (pose to drive voltage), ``pipeline_io`` (wire
format, simulated device, trace files) and ``cli``.
"""

__version__ = "0.1.0"
