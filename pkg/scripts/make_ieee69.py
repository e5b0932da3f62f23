"""Regenerate ``src/gridgame/cases/ieee69.json`` from the Baran-Wu 69-bus tables.

Impedances below are in ohms and loads in kW/kVAr as tabulated in the benchmark;
they are converted to per unit on a 12.66 kV / 10 MVA base.
"""
import json
import sys
from pathlib import Path

BASE_KV = 12.66
BASE_MVA = 10.0

# from, to, r (ohm), x (ohm)
BRANCHES = [
    (1, 2, 0.0005, 0.0012), (2, 3, 0.0005, 0.0012), (3, 4, 0.0015, 0.0036),
    (4, 5, 0.0251, 0.0294), (5, 6, 0.3660, 0.1864), (6, 7, 0.3811, 0.1941),
    (7, 8, 0.0922, 0.0470), (8, 9, 0.0493, 0.0251), (9, 10, 0.8190, 0.2707),
    (10, 11, 0.1872, 0.0619), (11, 12, 0.7114, 0.2351), (12, 13, 1.0300, 0.3400),
    (13, 14, 1.0440, 0.3450), (14, 15, 1.0580, 0.3496), (15, 16, 0.1966, 0.0650),
    (16, 17, 0.3744, 0.1238), (17, 18, 0.0047, 0.0016), (18, 19, 0.3276, 0.1083),
    (19, 20, 0.2106, 0.0690), (20, 21, 0.3416, 0.1129), (21, 22, 0.0140, 0.0046),
    (22, 23, 0.1591, 0.0526), (23, 24, 0.3463, 0.1145), (24, 25, 0.7488, 0.2475),
    (25, 26, 0.3089, 0.1021), (26, 27, 0.1732, 0.0572), (3, 28, 0.0044, 0.0108),
    (28, 29, 0.0640, 0.1565), (29, 30, 0.3978, 0.1315), (30, 31, 0.0702, 0.0232),
    (31, 32, 0.3510, 0.1160), (32, 33, 0.8390, 0.2816), (33, 34, 1.7080, 0.5646),
    (34, 35, 1.4740, 0.4873), (3, 36, 0.0044, 0.0108), (36, 37, 0.0640, 0.1565),
    (37, 38, 0.1053, 0.1230), (38, 39, 0.0304, 0.0355), (39, 40, 0.0018, 0.0021),
    (40, 41, 0.7283, 0.8509), (41, 42, 0.3100, 0.3623), (42, 43, 0.0410, 0.0478),
    (43, 44, 0.0092, 0.0116), (44, 45, 0.1089, 0.1373), (45, 46, 0.0009, 0.0012),
    (4, 47, 0.0034, 0.0084), (47, 48, 0.0851, 0.2083), (48, 49, 0.2898, 0.7091),
    (49, 50, 0.0822, 0.2011), (8, 51, 0.0928, 0.0473), (51, 52, 0.3319, 0.1114),
    (9, 53, 0.1740, 0.0886), (53, 54, 0.2030, 0.1034), (54, 55, 0.2842, 0.1447),
    (55, 56, 0.2813, 0.1433), (56, 57, 1.5900, 0.5337), (57, 58, 0.7837, 0.2630),
    (58, 59, 0.3042, 0.1006), (59, 60, 0.3861, 0.1172), (60, 61, 0.5075, 0.2585),
    (61, 62, 0.0974, 0.0496), (62, 63, 0.1450, 0.0738), (63, 64, 0.7105, 0.3619),
    (64, 65, 1.0410, 0.5302), (11, 66, 0.2012, 0.0611), (66, 67, 0.0047, 0.0014),
    (12, 68, 0.7394, 0.2444), (68, 69, 0.0047, 0.0016),
]

# bus: (kW, kVAr)
LOADS = {
    6: (2.6, 2.2), 7: (40.4, 30.0), 8: (75.0, 54.0), 9: (30.0, 22.0), 10: (28.0, 19.0),
    11: (145.0, 104.0), 12: (145.0, 104.0), 13: (8.0, 5.5), 14: (8.0, 5.5),
    16: (45.5, 30.0), 17: (60.0, 35.0), 18: (60.0, 35.0), 20: (1.0, 0.6),
    21: (114.0, 81.0), 22: (5.0, 3.5), 24: (28.0, 20.0), 26: (14.0, 10.0),
    27: (14.0, 10.0), 28: (26.0, 18.6), 29: (26.0, 18.6), 33: (14.0, 10.0),
    34: (19.5, 14.0), 35: (6.0, 4.0), 36: (26.0, 18.55), 37: (26.0, 18.55),
    39: (24.0, 17.0), 40: (24.0, 17.0), 41: (1.2, 1.0), 43: (6.0, 4.3),
    45: (39.22, 26.3), 46: (39.22, 26.3), 48: (79.0, 56.4), 49: (384.7, 274.5),
    50: (384.7, 274.5), 51: (40.5, 28.3), 52: (3.6, 2.7), 53: (4.35, 3.5),
    54: (26.4, 19.0), 55: (24.0, 17.2), 59: (100.0, 72.0), 61: (1244.0, 888.0),
    62: (32.0, 23.0), 64: (227.0, 162.0), 65: (59.0, 42.0), 66: (18.0, 13.0),
    67: (18.0, 13.0), 68: (28.0, 20.0), 69: (28.0, 20.0),
}

# Feeder zones by lateral membership; the 53-65 lateral (holding the 60-63
# corridor) is feeder 2.
FEEDERS = {2: range(53, 66), 3: range(28, 36), 4: range(36, 47), 5: range(47, 51)}

# bus, p_max (kW), c2, c1, c0; capacities span 90-220 kW
DERS = [
    (5, 150.0, 0.00040, 0.080, 4.0), (9, 120.0, 0.00010, 0.020, 1.0),
    (12, 150.0, 0.00010, 0.020, 1.0), (17, 90.0, 0.00010, 0.025, 1.0),
    (20, 100.0, 0.00010, 0.025, 1.0), (24, 110.0, 0.00010, 0.020, 1.0),
    (28, 120.0, 0.00040, 0.080, 4.0), (35, 90.0, 0.00010, 0.025, 1.0),
    (40, 130.0, 0.00010, 0.020, 1.0), (50, 180.0, 0.00040, 0.070, 3.0),
    (60, 220.0, 0.00010, 0.020, 1.0), (65, 220.0, 0.00010, 0.025, 1.0),
]
# Base-case setpoint as a fraction of capacity; puts the base minimum near 0.929 p.u.
BASE_FRACTION = 0.885

TIES = [(9, 15), (12, 17), (18, 33), (21, 60), (24, 65)]
# Tie impedance (ohm) as commonly used for the 69-bus reconfiguration ties.
TIE_R_OHM, TIE_X_OHM = 0.5, 0.5

CRITICAL = [11, 12, 21, 49, 50, 59, 61, 63]


def build(base_fraction):
    zbase = BASE_KV ** 2 / BASE_MVA
    feeder_of = {b: 1 for b in range(1, 70)}
    for fid, buses in FEEDERS.items():
        for b in buses:
            feeder_of[b] = fid
    buses = [
        {"id": b, "p_load": LOADS.get(b, (0.0, 0.0))[0], "q_load": LOADS.get(b, (0.0, 0.0))[1],
         "feeder": feeder_of[b]}
        for b in range(1, 70)
    ]
    branches = [
        {"id": i + 1, "from_bus": f, "to_bus": t, "r": round(r / zbase, 10), "x": round(x / zbase, 10),
         "status": "closed", "attackable": f != 1}
        for i, (f, t, r, x) in enumerate(BRANCHES)
    ]
    ties = [
        {"id": i + 1, "from_bus": f, "to_bus": t, "r": round(TIE_R_OHM / zbase, 10),
         "x": round(TIE_X_OHM / zbase, 10), "normally_open": True}
        for i, (f, t) in enumerate(TIES)
    ]
    ders = [
        {"id": i + 1, "bus": b, "p_min": 0.0, "p_max": pmax, "p_base": round(base_fraction * pmax, 3),
         "cost_c2": c2, "cost_c1": c1, "cost_c0": c0}
        for i, (b, pmax, c2, c1, c0) in enumerate(DERS)
    ]
    return {
        "name": "ieee69",
        "description": "Baran-Wu 69-bus feeder, 12.66 kV, with 12 DERs, 8 critical loads and 5 tie switches",
        "base_kv": BASE_KV,
        "base_mva": BASE_MVA,
        "der_unit_scale": 0.001,
        "slack": 1,
        "buses": buses,
        "branches": branches,
        "ties": ties,
        "ders": ders,
        "critical": CRITICAL,
    }


if __name__ == "__main__":
    frac = float(sys.argv[1]) if len(sys.argv) > 1 else BASE_FRACTION
    out = Path(__file__).resolve().parents[1] / "src" / "gridgame" / "cases" / "ieee69.json"
    out.write_text(json.dumps(build(frac), indent=1) + "\n")
    print(out)
