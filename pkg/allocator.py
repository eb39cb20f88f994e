"""
RBC channel simulator – allocator module

Chooses the split ratio γ of the frequency-doubled beam between the direct
(γ = 1) and IRS (γ = 0) channels so the total communication power is largest.

The procedure evaluates both endpoints, then scans γ from 0 to 1 in steps of
Δγ. P_oc(γ) is affine, so the optimum is an endpoint; the closed-form endpoint
comparison runs alongside the scan as a cross-check. Ties go to γ = 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from power_model import solve_power_budget, split_powers, DEFAULT_WAVELENGTH
from shared import AllocationStateError, ConfigurationError

_log = logging.getLogger(__name__)


DEFAULT_STEP = 0.01
TIE_TOL = 1e-12


@dataclass(frozen=True)
class AllocationInputs:
    laser: object
    crystal: object
    eff_direct: object = None
    eff_irs: object = None
    wavelength: float = DEFAULT_WAVELENGTH


@dataclass(frozen=True)
class AllocationResult:
    gamma_opt: float
    P_oc_opt: float
    P_oc_direct_only: float
    P_oc_irs_only: float
    trace: tuple
    endpoint_gamma: float
    bound_ok: bool = True
    budget: object = None


def closed_form_gamma(P_oc_d1, P_oc_i0):
    """Endpoint comparison; ties (within 1e-12) prefer the direct channel."""
    return 1.0 if P_oc_d1 >= P_oc_i0 - TIE_TOL else 0.0


def gamma_grid(step):
    count = int(math.floor(1.0 / step + 1e-9))
    grid = [k * step for k in range(count + 1)]
    if grid[-1] < 1.0 - 1e-12:
        grid.append(1.0)
    else:
        grid[-1] = 1.0
    return np.array(grid)


def optimize_gamma(state, step=DEFAULT_STEP, upper_bound=None):
    """Best split ratio for already-solved channels.

    upper_bound, when given, is the unobstructed direct-channel P_oc at γ = 1;
    exceeding it is flagged (bound_ok=False) and logged, not raised.
    """
    if state is None or state.eff_direct is None or state.eff_irs is None:
        raise AllocationStateError("both channels must be solved before optimising the split")
    if not 0.0 < step <= 0.5:
        raise ConfigurationError(f"gamma step must lie in (0, 0.5], got {step}")

    base = solve_power_budget(state.laser, state.crystal, state.eff_direct, state.eff_irs,
                              gamma=1.0, wavelength=state.wavelength)
    irs = state.eff_irs
    eta_ig = (state.eff_direct if base.fundamental_channel == "direct" else irs).eta_ig
    irs_surface = irs.eta_irs * state.laser.surface_2v

    def p_oc(gamma):
        d, i = split_powers(base.P_t_2v, gamma, eta_ig, state.eff_direct.eta_go,
                            irs.eta_gr, irs_surface, irs.eta_ro, state.laser)
        return d, i

    P_d1 = sum(p_oc(1.0))
    P_i0 = sum(p_oc(0.0))

    trace = []
    for gamma in gamma_grid(step):
        trace.append((float(gamma), float(sum(p_oc(gamma)))))
    best = max(v for _, v in trace)

    endpoint = closed_form_gamma(P_d1, P_i0)
    endpoint_value = P_d1 if endpoint == 1.0 else P_i0
    if endpoint_value >= best - TIE_TOL:
        gamma_opt, P_opt = endpoint, endpoint_value
    else:
        gamma_opt, P_opt = max(trace, key=lambda t: (t[1], t[0]))
        _log.warning("split scan optimum γ=%.3f disagrees with the endpoint comparison", gamma_opt)

    bound_ok = True
    if upper_bound is not None and P_opt > upper_bound + TIE_TOL:
        bound_ok = False
        _log.warning("P_oc %.6g W exceeds the unobstructed direct bound %.6g W", P_opt, upper_bound)

    d, i = p_oc(gamma_opt)
    budget = replace(base, gamma=gamma_opt, P_oc_d=d, P_oc_i=i)
    _log.debug("split optimum γ=%.2f P_oc=%.6g W (direct %.6g, irs %.6g)", gamma_opt, P_opt, P_d1, P_i0)
    return AllocationResult(
        gamma_opt=gamma_opt, P_oc_opt=P_opt, P_oc_direct_only=P_d1, P_oc_irs_only=P_i0,
        trace=tuple(trace), endpoint_gamma=endpoint, bound_ok=bound_ok, budget=budget,
    )
