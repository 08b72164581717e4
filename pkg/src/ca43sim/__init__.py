"""Simulator of a single trapped 43Ca+ hyperfine clock qubit.

Modules
-------
atomic      level structure, Breit-Rabi shifts, transition strengths
motion      Lamb-Dicke couplings, heating, transport
prep        optical pumping, sideband cooling, transfer to the clock state
dynamics    pulse sequences, Rabi/Ramsey scans, Raman and RAP drives
noise       magnetic, laser and depumping noise; dephasing envelopes
detection   electron-shelving readout and its error budget
fitkit      weighted least-squares fits of the experiment curves
harness     experiment descriptors, run reports and the CLI back end
"""

__version__ = "0.1.0"
