"""
Writing and checking a TAPP script
==================================

A script maps policy tags to lists of blocks.  Each block names a
controller, the workers it may use and how to pick among them.
"""

from tapp import builtin_topology, canonicalize, parse_script, render_script, validate_script
from tapp.fixtures import builtin_script_text

text = builtin_script_text("case-study")
print(text)

# parse, then fill in every default so nothing is left implicit
script = canonicalize(parse_script(text))
for name, tag in script.tags.items():
    print(f"{name}: {len(tag.blocks)} block(s), strategy={tag.strategy.value}, followup={tag.followup.value}")

# labels are checked against a concrete cluster
topology = builtin_topology("case-study")
print("diagnostics:", validate_script(script, topology))

# a typo in a label is reported with its position
broken = canonicalize(parse_script(text.replace("*edge", "*egde")))
for d in validate_script(broken, topology):
    print(d)

# syntax errors stop the parser at the first bad token
try:
    parse_script(text.replace("followup: fail", "followup: retry"))
except Exception as exc:
    print(type(exc).__name__, exc)

# the renderer writes the canonical form back out
print(render_script(script))
