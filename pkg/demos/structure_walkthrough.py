"""Small numeric tour of the structured-matrix identities.

    python demos/structure_walkthrough.py
"""

import numpy as np

from convbss import TimeDomainDemixer
from convbss.costs import (
    fd_block_spectra,
    gaussian_kl_cost,
    sos_cost,
    trinicon_blocks,
    trinicon_fd_cost,
    trinicon_td_cost,
)
from convbss.structured import extended_demixer, fd_filters, log_abs_det, truncated_toeplitz_det

rng = np.random.default_rng(0)
P, L, D, R = 2, 4, 3, 8
W = TimeDomainDemixer(rng.standard_normal((P, P, L)), D)

print("log|det| of the 2LP x 2LP extended matrix:", log_abs_det(extended_demixer(W)))
print("log|det| of the PD x PD truncated matrix: ", truncated_toeplitz_det(W))

x = rng.standard_normal((P, 2000))
blocks = trinicon_blocks(x, L, 200)
print("broadband cost, Toeplitz path:", trinicon_td_cost(W, blocks))
print("broadband cost, DFT path:     ", trinicon_fd_cost(fd_filters(W, R), fd_block_spectra(blocks, R), D))

kl, _ = gaussian_kl_cost(W, x, 200)
sos, _ = sos_cost(W, x, 200)
print("Gaussian mutual information:", kl, " SOS cost:", sos, " ratio:", sos / kl)
