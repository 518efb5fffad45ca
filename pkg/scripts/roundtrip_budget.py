"""Refinement study behind the frozen round-trip MSIE budgets.

For every system, test-grid mu and method, the source trajectory is
reparameterized at several n_tau, mapped back to physical time and compared
with the source (states scaled to [-1, 1] by the source extrema). The error
must fall as n_tau grows (it is interpolation error). The budget per
system is ten times the worst case at the default n_tau, rounded up to a
power of ten. Results are written to tests/data/roundtrip_budgets.json.

    python3 scripts/roundtrip_budget.py
"""
import json
import math
from pathlib import Path

from retime.integrate import integrate_implicit_adaptive
from retime.metrics import reconstruction_msie
from retime.reparam import DEFAULT_N_TAU, METHODS, reparameterize
from retime.systems import get_system

N_TAUS = (250, 500, 1000, 2000, 4000)
OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "roundtrip_budgets.json"


def main():
    study, budgets = {}, {}
    for name in ("sls", "vdp", "hires"):
        sysm = get_system(name)
        worst = 0.0
        rows = []
        for e in sysm.test_exponents:
            traj = integrate_implicit_adaptive(sysm, 10.0 ** e)
            for m in METHODS:
                errs = {}
                for n in N_TAUS:
                    res = reparameterize(m, traj, n_tau=n)
                    errs[str(n)] = reconstruction_msie(res, traj.times, traj.states).state
                worst = max(worst, errs[str(DEFAULT_N_TAU)])
                rows.append({"mu_exponent": e, "method": m, "msie": errs})
                print(name, e, m, " ".join(f"{errs[str(n)]:.2e}" for n in N_TAUS), flush=True)
        budgets[name] = 10.0 ** math.ceil(math.log10(10.0 * worst))
        study[name] = rows
    payload = {"n_tau": DEFAULT_N_TAU, "budgets": budgets, "study": study}
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    print("budgets", budgets)


if __name__ == "__main__":
    main()
