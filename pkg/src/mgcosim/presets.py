"""Shipped scenario presets.

``baseline`` is the reference setup: six units in a full mesh with the
standard control and radio parameter tables, a fair co-channel interferer
on the air and no jammer.  The other presets toggle the adversaries and
the spread-delay countermeasure around that reference.
"""

from __future__ import annotations

_SCENARIO = """\
[scenario]
run_length_s = {run_length}
activation_s = 1.0
plant_dt_s = 0.0001
base_seed = 1
replicas = 1

[grid]
n_units = 6
line_resistance_ohm = 0.1
load_resistance_ohm = 0.75

[primary]
r_d_ohm = 0.2
k_pv = 4
k_iv = 800
k_pc = 1
k_ic = 97

[secondary]
v_ref = 48
k_psc = 0.02
k_isc = 1
k_psv = 0.02
k_isv = 2

[consensus]
epsilon = 0.025
t_ca_s = 0.025
topology = full_mesh

[mac]
slot_us = 20
difs_us = 32
data_rate_bps = 1000000
phy_us = 96
mac_header_bits = 272
contention_window = 32
propagation_us = 2
payload_bytes = 10
"""

_UI = """\
[interferer]
enabled = true
rate_per_s = 100
payload_bytes = 512
"""

# The jammer overpowers receptions only at agents 4 and 5, but its decode
# horizon also covers their ring neighbours 3 and 6: hearing a clean
# preamble takes far less signal than drowning a reception.
_JAMMER = """\
[jammer]
enabled = true
attacked = 4,5
sniffs = 3,4,5,6
q = 0.8
payload_bytes = 512
"""


def _common(run_length: float) -> str:
    return _SCENARIO.format(run_length=run_length)


PRESETS: dict[str, str] = {
    "clean": _common(3.0) + "\n[protocol]\nmode = baseline\n",
    "baseline": _common(5.0) + "\n[protocol]\nmode = baseline\n\n" + _UI,
    "jammed": (_common(5.0) + "\n[protocol]\nmode = baseline\n\n"
               + _UI + "\n" + _JAMMER),
    "jammed_spread": (_common(5.0) + "\n[protocol]\nmode = spread\nt_e_s = 0.012\n\n"
                      + _UI + "\n" + _JAMMER),
}

DESCRIPTIONS: dict[str, str] = {
    "clean": "no interferer, no jammer; staggered burst scheduling",
    "baseline": "fair Poisson interferer only (reference setup)",
    "jammed": "interferer plus reactive jammer on agents 4 and 5",
    "jammed_spread": "jammed channel with the spread-delay countermeasure "
                     "(t_e = 12 ms)",
}
