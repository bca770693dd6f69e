"""Effect of grad-div stabilization on a sharp void-fraction step.

The void fraction drops from 1 to 0.5 on |x| <= 0.5. Mass balance says the
interstitial velocity inside the step is u_in / eps = 2. Without grad-div the
discrete continuity residual is large and the velocity overshoots that value
near the jumps; with grad-div both shrink.

Run:  python demos/step_graddiv.py [cells]
"""

import sys

from vansfem.stepdemo import compare_graddiv


def main(cells=32):
    for r in compare_graddiv(n_cells=cells, nu=0.01):
        label = "with grad-div   " if r.graddiv else "without grad-div"
        print(f"{label}: continuity L2 {r.continuity_l2:.4f}, max u_x in step {r.u_max:.4f}, "
              f"overshoot {r.overshoot:.4f}, converged {r.converged}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 32)
