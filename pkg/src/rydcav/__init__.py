"""Simulator for a cavity-enhanced Rydberg superheterodyne microwave receiver."""

__version__ = "0.1.0"

from .atomphys import (DensityMatrix4, DriveFields, LadderSystem, VaporCell, build_hamiltonian,
                       build_liouvillian, doppler_averaged_coherence, probe_transmission,
                       steady_state)
from .cavity import (CavityGeometry, cavity_transmission, effective_kappa_gain, finesse,
                     intracavity_buildup)
from .chain import Receiver
from .errors import *  # noqa: F401,F403
from .hetdyne import (HeterodyneScenario, NoiseModel, measure_snr, small_signal_amplitude,
                      spectrum_analyzer, sweep_lo, sweep_sig, synthesize_trace)
from .scenario import Scenario, load_scenario, preset_path
from .spectro import (SpectrumTrace, VoigtDoubletFit, at_splitting_to_field, extract_kappa,
                      fit_voigt_doublet, scan_spectrum)
