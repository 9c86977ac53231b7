"""
The three-regime comparison table
=================================

Every value cell next to its published reference. Bounds use 10**6
simulated paths, as does ``liquidation reproduce-table1``.
"""

from liquidation.reproduce import bundled_config, table1

cells, timings = table1(bundled_config())
for c in cells:
    ref = "" if c.reference is None else f"ref {c.reference:7.2f}  ({100 * c.rel_err:+.2f}%)"
    print(f"{c.group:24s} {c.label:8s} {c.value:8.2f}  {ref}")
print({k: round(v, 1) for k, v in timings.items()})
