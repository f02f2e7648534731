"""Frozen reference values from computations independent of the package.

Gaussian integrals: mpmath.quad at 30 digits over the real line.
Derivatives: mpmath.diff of c (1 + x^2)^(-delta/2).
Order-1 decay constant: max of delta |x| / <x> over 5000 log-spaced |x| in [1e-3, 1e4] (plus 0).
Phase integral: scipy DOP853 (rtol 2.2e-14, atol 1e-14) on the augmented system
(x, xi, theta) with theta' = xi^2/2 + V - x V', integrated backward from s = 16.
"""

# (2 pi)^(-1/2) int exp(-x^2/2) exp(-i x xi) dx at xi = 1.3
GAUSS_FT_1p3 = 0.42955735821073914835

# int exp(-(x - 1.5)^2 / 2) exp(-x^2 / 2) dx
GAUSS_OVERLAP_1p5 = 1.0099137618741471826

# W_phi phi (x, xi) for phi = exp(-y^2/2): (x, xi) -> (re, im)
GAUSS_WPT = {
    (0.0, 0.0): (1.7724538509055160273, 0.0),
    (1.0, 0.5): (1.2564419682236905482, -0.32082230606897734403),
    (-2.0, 1.5): (0.026280745687498298874, 0.37059583146423565383),
    (0.5, -3.0): (0.12840897967932342605, 0.11962535089428804071),
}

# d/dx of coulomb_like(0.1, 0.5)
COULOMB_DV = {0.5: -0.018914832180063516266, 3.0: -0.0084351198778552362059, 10.0: -0.0015615945589171147349}

# sup <x>^(1.5) |V'(x)| for coulomb_like(1, 0.5) over the log-spaced box
COULOMB_C1 = 0.49999999749999996

# Theta(16; 0, 1) for coulomb_like(0.1, 0.5) and the trajectory foot
PHASE_16 = 9.876715768644091
FOOT_16 = (-16.9014440871603, 1.073030351644963)
