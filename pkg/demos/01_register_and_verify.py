"""Register a few citizens, then verify claims the way a bank teller would.

The verifier never sees stored data. Each claimed column comes back as a
verdict only, rendered in the terminal style the desk staff already know.
"""

from bdps.registry import CitizenRecord, DuplicateId, Registry
from bdps.storage import LogStore

registry = Registry(LogStore())

people = [
    CitizenRecord(national_id="2610731845921", name="অমিত হাসান",
                  english_name="Amit Hasan", father_name="রফিক হাসান",
                  phone="01711112222", b_group="O+", occupation="Teacher"),
    CitizenRecord(national_id="4420917736450", name="সানজিদা ইয়াসমিন",
                  english_name="Sanjida Yasmin", phone="01899998888",
                  b_group="A-", occupation="Engineer"),
]

for person in people:
    seq = registry.insert_citizen(person)
    print(f"registered {person.english_name:<14} nid={person.national_id} "
          f"(log seq {seq})")

try:
    registry.insert_citizen(CitizenRecord(national_id="2610731845921",
                                          name="someone else"))
except DuplicateId as err:
    print(f"re-registration refused: {err}")

print()
print("a bank asks: is this really Amit Hasan, phone 01711112222, group B+?")
report = registry.verify_fields("2610731845921", {
    "English_name": "Amit Hasan",
    "Phone": "01711112222",
    "B_group": "B+",
    "Shoe_size": "42",
})
for line in report.legacy_lines():
    print(" ", line)

print()
print("what actually crosses the wire:")
print(" ", report.to_json())
print()
print("note: no stored value appears above, only verdicts. The wrong blood")
print("group says Wrong without revealing the right one, and Shoe_size is")
print("rejected as a column this registry does not even hold.")
