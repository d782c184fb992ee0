"""
Behaviour cues in WebVTT
========================
"""

from herdpipe.vtt import BehaviourCue, active_cues, parse_timecode, parse_vtt, serialize_vtt, validate_cues

listing = """0:05:11.000 --> 0:05:23.000
Cow 2 Drinking
0:05:17.000 --> 0:05:42.000
Cow 4 Other
0:05:22.000 --> 0:05:40.000
Cow 8 Grazing
"""
cues = parse_vtt(listing)
for c in cues:
    print(c)

# which cows are doing what at 5:25?
for c in active_cues(cues, parse_timecode("0:05:25.000")):
    print("active:", c.payload)

# different cows may overlap freely; the same cow may not change behaviour mid-cue
print(validate_cues(cues))
clash = cues + [BehaviourCue(2, "Grazing", 315_000, 330_000)]
print(validate_cues(clash))

# canonical form round-trips
text = serialize_vtt(cues)
print(text)
assert parse_vtt(text) == cues
