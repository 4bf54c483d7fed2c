"""Published three-state, two-input benchmark used as a regression fixture.

Matrices are quoted to the four decimals in which they were published; values
derived from them (closed-loop cone matrices, certificates) are recomputed,
not stored.
"""

import numpy as np

A = np.array([[3.0, 0.0, 1.0],
              [0.0, -1.0, 1.0],
              [-2.0, 0.0, 0.0]])
B = np.array([[1.0, -1.0],
              [0.0, 1.0],
              [0.0, 1.0]])

# safety rows h1 = (1, 0, 1), h2 = (0, 1, -1) and the virtual row h3 = (0, 0, -1)
H = np.array([[1.0, 0.0, 1.0],
              [0.0, 1.0, -1.0],
              [0.0, 0.0, -1.0]])
SAFETY_ROWS = (0, 1)

RHO = 4.0
K = np.array([[-4.7536, 0.0, -4.9393],
              [1.7415, 0.0, -3.7856]])

G0 = np.array([[0.0, -0.5, 0.5],
               [0.0, -0.5, 0.5],
               [0.0, 0.5, -0.5]])
K0 = np.array([[-1.0, 0.0, -1.0],
               [1.0, 0.5, -0.5]])

MU = -0.75
P = np.array([[0.8707, 0.2572, -0.1918],
              [0.2572, 1.0229, -0.3984],
              [-0.1918, -0.3984, 0.9301]])

# published cone-coordinate matrices H(A+BK)H^-1 and H(-G0)H^-1
CONE_MATRIX = np.array([[-3.7536, 0.0, 0.1857],
                        [2.0, -1.0, 2.0],
                        [0.2585, 0.0, -3.5271]])
CONE_OFFSET = np.array([[0.0, 0.0, 0.0],
                        [0.0, 1.0, 0.0],
                        [0.0, 0.5, 0.0]])

X0 = np.array([0.5, 1.0, 0.0])
ISSF_R = np.array([0.2, 1.0, 0.2])

# perturbation parameters of the two robustness runs
ISS_NU = 1.0 / 8.0
ISS_FREQ = 5.0
ISS_CHANNEL = np.array([1.0, 0.0, 0.0])
NOISE_MAGNITUDE = 0.01
ADDITIVE_DIRECTION = np.array([1.0, 1.0, 1.0])


def y0():
    """Y0 = K0 (G0 - I), the second unknown of the homogenization system."""
    return K0 @ (G0 - np.eye(3))


def generator(mu=MU):
    return np.eye(3) + mu * G0
