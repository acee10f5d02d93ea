#!/usr/bin/env python3
"""Generates crates/core/fixtures/ieee123_like.json.

The feeder is a synthetic 4.16 kV network shaped after the IEEE 123-bus
test feeder: a three-phase trunk, single-phase laterals, six normally
closed sectionalizers (S1..S6) and two normally open ties (S7, S8). The
nine attackable spot loads sit on single-phase laterals hanging off a
three-phase cluster at the far end of the trunk; the ties feed that
cluster from short express cables out of the substation.

Line impedances use the classic overhead configurations (ohm/mile):
config 1 (averaged as if transposed, trunk lengths scaled) for three-phase
sections and a single-conductor phase impedance
for laterals. Run from the repository root:

    python3 tools/gen_ieee123_like.py > crates/core/fixtures/ieee123_like.json
"""
import json
import os
import sys

FT_PER_MILE = 5280.0

CONFIG1_R = [[0.4576, 0.1560, 0.1535], [0.1560, 0.4666, 0.1580], [0.1535, 0.1580, 0.4615]]
CONFIG1_X = [[1.0780, 0.5017, 0.3849], [0.5017, 1.0482, 0.4236], [0.3849, 0.4236, 1.0651]]
LATERAL_R = 1.3292
LATERAL_X = 1.3475
PH = {"A": 0, "B": 1, "C": 2}

# Tuning knobs (environment overrides are for experimentation only).
TRUNK_SCALE = float(os.environ.get("TRUNK_SCALE", "0.35"))
HUB_KW = float(os.environ.get("HUB_KW", "200"))
SEG_SCALE = float(os.environ.get("SEG_SCALE", "1.0"))
TIE_FT = float(os.environ.get("TIE_FT", "150"))


def transposed(m):
    """Averages self and mutual terms, as for a fully transposed line."""
    s = sum(m[i][i] for i in range(3)) / 3
    mu = sum(m[i][j] for i in range(3) for j in range(3) if i != j) / 6
    return [[s if i == j else mu for j in range(3)] for i in range(3)]


CONFIG1_R = transposed(CONFIG1_R)
CONFIG1_X = transposed(CONFIG1_X)

buses = []
branches = []
seen = set()


def bus(name, phases, kw=None, pf_ratio=0.5):
    assert name not in seen, name
    seen.add(name)
    load_kw = [0.0, 0.0, 0.0]
    load_kvar = [0.0, 0.0, 0.0]
    if kw:
        for ph, p in kw.items():
            load_kw[PH[ph]] = float(p)
            load_kvar[PH[ph]] = float(p) * pf_ratio
    buses.append({"id": name, "phases": phases, "load_kw": load_kw, "load_kvar": load_kvar})


def r6(v):
    return round(v, 6)


def line3(a, b, feet, scale=None):
    k = feet * (TRUNK_SCALE if scale is None else scale) / FT_PER_MILE
    branches.append({
        "from": a, "to": b,
        "r_ohm": [[r6(v * k) for v in row] for row in CONFIG1_R],
        "x_ohm": [[r6(v * k) for v in row] for row in CONFIG1_X],
    })


def line1(a, b, phase, feet):
    k = feet / FT_PER_MILE
    r = [[0.0] * 3 for _ in range(3)]
    x = [[0.0] * 3 for _ in range(3)]
    i = PH[phase]
    r[i][i] = r6(LATERAL_R * k)
    x[i][i] = r6(LATERAL_X * k)
    branches.append({"from": a, "to": b, "r_ohm": r, "x_ohm": x})


def switch(a, b, name, normal):
    branches.append({"from": a, "to": b, "switch": name, "normal": normal})


def lateral(root, phase, names, feet, kw):
    """Single-phase chain hanging off `root`; every bus carries `kw`."""
    prev = root
    for n in names:
        bus(n, phase, {phase: kw} if kw else None)
        line1(prev, n, phase, feet)
        prev = n


def spot3(name, kw):
    return {"A": kw, "B": kw, "C": kw}


# --- substation and trunk -------------------------------------------------
bus("N150", "ABC")
bus("N149", "ABC")
switch("N150", "N149", "S1", "closed")

TRUNK = [  # (bus, feet from previous, balanced spot load kW per phase)
    ("N1", 400, 20), ("N7", 300, 20), ("N8", 200, 0), ("N13", 300, 10),
]
prev = "N149"
for name, ft, kw in TRUNK:
    bus(name, "ABC", spot3(name, kw) if kw else None)
    line3(prev, name, ft)
    prev = name

bus("N152", "ABC")
switch("N13", "N152", "S2", "closed")
TRUNK2 = [
    ("N52", 400, 20), ("N53", 250, 20), ("N54", 125, 0), ("N57", 350, 10),
    ("N60", 750, 20), ("N62", 250, 0), ("N63", 175, 20), ("N64", 350, 0),
    ("N65", 425, 10), ("N66", 325, 0), ("N97", 300, 0),
]
prev = "N152"
for name, ft, kw in TRUNK2:
    bus(name, "ABC", spot3(name, kw) if kw else None)
    line3(prev, name, ft)
    prev = name

# --- laterals along the main trunk ----------------------------------------
lateral("N1", "B", ["N2"], 175, 20)
lateral("N1", "C", ["N3", "N4", "N5"], 250, 20)
lateral("N7", "A", ["N9", "N10", "N11"], 225, 20)
lateral("N8", "B", ["N12"], 225, 20)
lateral("N8", "A", ["N14", "N15", "N16"], 250, 20)
lateral("N52", "A", ["N58", "N59"], 250, 20)
lateral("N53", "B", ["N55", "N56"], 275, 20)
lateral("N54", "C", ["N68", "N69", "N70", "N71"], 275, 20)
lateral("N57", "A", ["N73", "N74", "N75"], 200, 20)
lateral("N62", "B", ["N79", "N80", "N81", "N82"], 250, 20)
lateral("N63", "C", ["N83", "N84", "N85"], 250, 20)
lateral("N64", "A", ["N90", "N92", "N94"], 225, 20)
lateral("N65", "B", ["N95", "N96"], 225, 20)

# --- sectionalized three-phase spur off N13 (S3) --------------------------
bus("N18", "ABC")
switch("N13", "N18", "S3", "closed")
SPUR1 = [("N21", 300, 10), ("N23", 250, 0), ("N25", 275, 10), ("N28", 200, 0),
         ("N29", 300, 10), ("N30", 350, 0)]
prev = "N18"
for name, ft, kw in SPUR1:
    bus(name, "ABC", spot3(name, kw) if kw else None)
    line3(prev, name, ft)
    prev = name
lateral("N21", "A", ["N22", "N24"], 300, 20)
lateral("N23", "C", ["N26", "N27", "N31"], 250, 20)
lateral("N25", "B", ["N33", "N34"], 250, 20)
lateral("N28", "A", ["N35", "N36", "N37"], 250, 20)
lateral("N30", "C", ["N38", "N39"], 250, 20)
lateral("N29", "B", ["N40", "N41", "N42"], 250, 20)

# --- sectionalized spur off N60 (S4), with a sub-spur behind S6 -----------
bus("N160", "ABC")
switch("N60", "N160", "S4", "closed")
SPUR2 = [("N67", 350, 10), ("N72", 275, 0), ("N76", 200, 10), ("N77", 400, 0),
         ("N78", 100, 10)]
prev = "N160"
for name, ft, kw in SPUR2:
    bus(name, "ABC", spot3(name, kw) if kw else None)
    line3(prev, name, ft)
    prev = name
lateral("N67", "A", ["N43", "N44", "N45"], 250, 20)
lateral("N72", "B", ["N46", "N47", "N48"], 250, 20)
lateral("N76", "C", ["N49", "N50", "N51"], 250, 20)
lateral("N77", "A", ["N86", "N87"], 250, 20)
bus("N610", "ABC")
switch("N78", "N610", "S6", "closed")
bus("N79x", "ABC", spot3("N79x", 10))
line3("N610", "N79x", 300)
lateral("N79x", "B", ["N88", "N89", "N91"], 250, 20)
lateral("N610", "C", ["N93", "N193"], 250, 20)

# --- spur off N54 behind S5 -----------------------------------------------
bus("N197", "ABC")
switch("N54", "N197", "S5", "closed")
bus("N135", "ABC", spot3("N135", 10))
line3("N197", "N135", 350)
lateral("N135", "A", ["N136", "N137"], 250, 20)
lateral("N135", "B", ["N138", "N139"], 250, 20)
lateral("N135", "C", ["N140", "N141"], 250, 20)

# --- attacked cluster at the end of the trunk -----------------------------
bus("N98", "ABC", spot3("N98", HUB_KW) if HUB_KW else None)
line3("N97", "N98", 275)
bus("N101", "ABC")
line3("N98", "N101", 250)
bus("N105", "ABC")
line3("N101", "N105", 275)
bus("N108", "ABC")
line3("N97", "N108", 325)

SEG_C, SEG_B, SEG_A = (round(v * SEG_SCALE) for v in (int(os.environ.get("SEG_C", "710")), int(os.environ.get("SEG_B", "1150")), 700))
lateral("N98", "B", ["N99"], 2 * SEG_B, 40)
lateral("N101", "C", ["N102", "N103", "N104"], SEG_C, 40)
lateral("N105", "B", ["N106", "N107"], SEG_B, 40)
bus("N109", "A", {"A": 40})
line1("N108", "N109", "A", SEG_A)
bus("N110", "A")
line1("N109", "N110", "A", SEG_A)
bus("N111", "A", {"A": 40})
line1("N110", "N111", "A", SEG_A)
lateral("N110", "A", ["N112", "N113"], SEG_A, 0)
bus("N114", "A", {"A": 40})
line1("N113", "N114", "A", SEG_A)

# --- ties fed from express cables out of the substation -------------------
bus("N151", "ABC")
line3("N150", "N151", TIE_FT, 1.0)
switch("N151", "N101", "S7", "open")
bus("N300", "ABC")
line3("N150", "N300", TIE_FT, 1.0)
switch("N300", "N105", "S8", "open")

meters = sum(len(b["phases"]) for b in buses)
doc = {
    "name": "ieee123-like",
    "description": (
        "Synthetic 4.16 kV feeder shaped after the IEEE 123-bus system: "
        f"{len(buses)} buses, {meters} per-phase meter points, switches S1-S6 "
        "normally closed and ties S7-S8 normally open. Generated by "
        "tools/gen_ieee123_like.py."
    ),
    "base_kv_ln": round(4.16 / 3 ** 0.5, 6),
    "base_kva": 1000.0,
    "source": "N150",
    "buses": buses,
    "branches": branches,
}
print(json.dumps(doc, indent=1))
print(f"buses={len(buses)} meters={meters} three_phase={sum(1 for b in buses if len(b['phases'])==3)}", file=sys.stderr)
