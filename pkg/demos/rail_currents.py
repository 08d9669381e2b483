"""Lead currents of a healthy and a broken section.

Solves the cell network for each injection mode and prints the current
magnitudes at the emitter and receiver leads. A break on one rail starves
the receiver leads of that track, and the closer the break lies to the
receiver the less current reaches it.
"""

from railbreak.features import InjectionMode
from railbreak.netmodel import BreakageSpec, SectionModel, solve_currents

base = SectionModel()
modes = {"track 1": InjectionMode.independent(1), "joint": InjectionMode.joint()}

# healthy section first, then the same rail broken at each position
cases = [("healthy", frozenset())]
cases += [(f"R1e{q}/4", frozenset({BreakageSpec(1, "e", q)})) for q in (1, 2, 3)]

for mode_name, mode in modes.items():
    print(f"-- {mode_name} injection")
    print(f"{'case':<10}" + "".join(f"{k:>11}" for k in ("I1e_e", "I1i_e", "I1e_r", "I1i_r")))
    for name, brk in cases:
        mags = solve_currents(base.with_breakages(brk), mode).magnitudes()
        row = "".join(f"{mags[k]:>11.5f}" for k in ("I1e_e", "I1i_e", "I1e_r", "I1i_r"))
        print(f"{name:<10}{row}")
