"""Builds one_channel.edf byte by byte from the EDF field layout and
writes the physical values a conforming reader must return."""
import struct

def field(text, width):
    raw = text.encode("ascii")
    assert len(raw) <= width, text
    return raw + b" " * (width - len(raw))

ns = 1
samples = 256
digital = [((i * 37) % 4096) - 2048 for i in range(samples)]
digital[0] = 0

header = b"".join([
    field("0", 8),
    field("X X X fixture", 80),
    field("Startdate 01-JAN-2001 fixture", 80),
    field("01.01.01", 8),
    field("00.00.00", 8),
    field(str(256 + 256 * ns), 8),
    field("", 44),
    field("1", 8),
    field("1", 8),
    field(str(ns), 4),
    field("C3-P3", 16),
    field("AgAgCl electrode", 80),
    field("uV", 8),
    field("-100", 8),
    field("100", 8),
    field("-2048", 8),
    field("2047", 8),
    field("HP:0.1Hz", 80),
    field(str(samples), 8),
    field("", 32),
])
assert len(header) == 512
body = b"".join(struct.pack("<h", d) for d in digital)
with open("one_channel.edf", "wb") as f:
    f.write(header + body)

with open("one_channel.expected.txt", "w") as f:
    for d in digital:
        phys = (d - (-2048)) * (100 - (-100)) / (2047 - (-2048)) + (-100)
        f.write(f"{d}\t{phys!r}\n")
