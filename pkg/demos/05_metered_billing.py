"""Corporate consumers pay per lookup; citizens and entry clerks do not.

A bank hammers the verify endpoint for a morning, and the month-end
invoice is an exact replay of its ledger rows, half-open on the right so
two adjacent billing periods never double-charge a second.
"""

from bdps.gateway import Gateway
from bdps.registry import Role

gw = Gateway()
gw.credentials.add_corporate("brac-bank", "s3cret")
gw.credentials.add_corporate("city-bank", "hunter2")

t = 9 * 3600.0
for minute in range(180):
    t = 9 * 3600.0 + minute * 60.0
    gw.record_usage("brac-bank", "verify", t, Role.CORPORATE)
    if minute % 3 == 0:
        gw.record_usage("city-bank", "bulk_verify", t, Role.CORPORATE,
                        count=25)
    if minute % 45 == 0:
        gw.record_usage("entry-1", "registration", t, Role.DATA_ENTRY)

for key in ("brac-bank", "city-bank", "entry-1"):
    inv = gw.invoice(key, 9 * 3600.0, 12 * 3600.0)
    print(f"{key:<10} {inv.line_count:4d} calls  {inv.total_units:5d} units")

print()
print("entry clerks generate rows but owe nothing, their fee is zero.")
print()

first_half = gw.invoice("brac-bank", 9 * 3600.0, 10.5 * 3600.0)
second_half = gw.invoice("brac-bank", 10.5 * 3600.0, 12 * 3600.0)
whole = gw.invoice("brac-bank", 9 * 3600.0, 12 * 3600.0)
print(f"split at 10:30 -> {first_half.total_units} + {second_half.total_units}"
      f" = {first_half.total_units + second_half.total_units} units "
      f"(whole period says {whole.total_units})")
print("half-open windows: the boundary second lands in exactly one bill.")
