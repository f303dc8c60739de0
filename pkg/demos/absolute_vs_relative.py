"""
Absolute and relative discriminator probabilities
=================================================

A standard discriminator reads sigmoid(C(x_r)) on its own. The relativistic
average discriminator reads sigmoid(C(x_r) - mean C(x_f)), so the same real
critic value can mean very different things depending on the fakes.
"""
from relgan.cli import SCENARIOS, format_losstable, losstable_rows

for label, real, fake in SCENARIOS:
    print(format_losstable(losstable_rows([real], [fake]), label))
    print()

# with whole batches the averages do the work
table = losstable_rows([2.0, 1.5, 3.0], [1.0, -0.5, 0.2])
print(format_losstable(table, "a small batch"))
