"""Robust beamforming for two-hop amplify-and-forward multi-antenna relay networks.

The source sends one stream through ``R`` multi-antenna relays to a
single-antenna destination.  The second-hop channels are known only up to a
norm-bounded error, and the designs maximize the worst-case received SNR.

Modules
-------
model
    Network configuration, channel draws, uncertainty vertices.
snr
    Worst-case SNR evaluation and relay matrix assembly.
closedform
    Perfect-CSI power allocation and special source vectors.
conic, convex
    Dense interior-point solver and the SOCP/SDP subproblems built on it.
dinkelbach
    Robust relay power allocation.
pa
    Globally optimal source beamforming by polyblock outer approximation.
heuristics
    Gradient, simplified and nonrobust designs.
bench
    Monte Carlo experiments and CSV output.
"""

__version__ = "0.1.0"
