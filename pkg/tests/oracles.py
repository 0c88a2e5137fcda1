"""Reference values computed once with mpmath at 30 digits and frozen here.

Each constant was produced from the closed-form expression written out
directly in mpmath, not through this package.
"""

SQRT3_OVER_PI = 0.551328895421792049511326498313
HEAT_STD_AT_UNIT_X = 0.0965323526300539075419725980099  # exp(-1/2) / (2 pi)
LANGEVIN_AT_X1 = 0.00136660769958582613387819967403  # (sqrt 3 / pi) exp(-6)
# a = 2, t = 0.5, (x, v) = (0.1, -0.2)
LANGEVIN_A2 = 0.629848124453365999368779163202
# tilted kernel a = 1, t = 1.5, s = 0.5, (x, y) = (0.3, -0.4): value and two derivatives
# along d/dy - t d/dx, differentiated numerically by mpmath
TILTED = (0.479302315648261888742830144574, -0.0958604631296523777485660289148,
          -1.89803716996711707942160737251)
# Q_1^{-1} = [[12, -6], [-6, 4]] quadratic form at (1, 0)
CONTROL_ENERGY = 12.0
