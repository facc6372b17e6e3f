"""Regenerate the bundled world files under src/semexplore/worlds/."""

import json
from pathlib import Path

import numpy as np

SIZE = 40
RES = 0.25
OUT = Path(__file__).resolve().parents[1] / "src" / "semexplore" / "worlds"


def blank(floor):
    obstacle = np.zeros((SIZE, SIZE), dtype=bool)
    obstacle[0, :] = obstacle[-1, :] = obstacle[:, 0] = obstacle[:, -1] = True
    classes = np.full((SIZE, SIZE), floor, dtype=int)
    return obstacle, classes


def block(obstacle, r0, r1, c0, c1):
    obstacle[r0:r1, c0:c1] = True


def encode(name, obstacle, classes, ambiguity, start):
    rows = []
    for i in range(SIZE):
        rows.append("".join("#" if obstacle[i, j] else np.base_repr(classes[i, j], 36).lower()
                            for j in range(SIZE)))
    amb = [[int(r), int(c), float(ambiguity[r, c])] for r, c in zip(*np.nonzero(ambiguity))]
    return {"name": name, "width": SIZE, "height": SIZE, "resolution": RES,
            "start": list(start), "obstacle_class": 0, "rows": rows, "ambiguity": amb}


def rooms():
    obstacle, classes = blank(1)
    amb = np.zeros((SIZE, SIZE))
    # interior walls with 4-cell doorways
    obstacle[20, 1:39] = True
    obstacle[1:39, 18] = True
    obstacle[20, 7:11] = False
    obstacle[20, 27:31] = False
    obstacle[8:12, 18] = False
    obstacle[28:32, 18] = False
    classes[1:20, 1:18] = 2      # kitchen
    classes[1:20, 19:39] = 3     # living room
    classes[21:39, 1:18] = 4     # bedroom
    classes[21:39, 19:39] = 5    # study
    block(obstacle, 3, 5, 3, 12)     # counter
    classes[5:8, 3:12] = 6
    block(obstacle, 6, 10, 28, 33)   # sofa
    classes[11:16, 24:34] = 7        # rug
    amb[11:16, 24:34] = 0.5
    block(obstacle, 27, 33, 4, 10)   # bed
    classes[24:27, 4:12] = 8
    block(obstacle, 33, 37, 30, 37)  # desk
    classes[28:33, 22:30] = 9
    amb[28:33, 22:30] = 0.3
    return encode("rooms", obstacle, classes, amb, (0.875 + 0.5, 0.875 + 0.5, 0.0))


def aisles():
    obstacle, classes = blank(10)
    amb = np.zeros((SIZE, SIZE))
    shelf_rows = [(6, 8), (12, 14), (18, 20), (24, 26), (30, 32)]
    for k, (r0, r1) in enumerate(shelf_rows):
        block(obstacle, r0, r1, 6, 18)
        block(obstacle, r0, r1, 22, 35)
        # aisle floor in front of each shelf carries the section's class
        classes[r1:r1 + 4, 6:35] = 11 + k
    classes[1:6, 1:39] = 10
    classes[33:39, 1:39] = 13
    amb[26:30, 22:35] = 0.5          # mixed-genre aisle
    amb[8:12, 6:18] = 0.3
    block(obstacle, 34, 37, 3, 9)    # checkout counter
    return encode("aisles", obstacle, classes, amb, (1.375, 1.375, 0.0))


def open_hall():
    obstacle, classes = blank(1)
    amb = np.zeros((SIZE, SIZE))
    classes[1:20, 20:39] = 2
    classes[20:39, 1:20] = 3
    classes[20:39, 20:39] = 4
    for r0, c0 in [(8, 8), (8, 28), (28, 8), (28, 28)]:
        block(obstacle, r0, r0 + 3, c0, c0 + 3)
        classes[r0 - 2:r0 + 5, c0 - 2:c0 + 5] = np.where(
            obstacle[r0 - 2:r0 + 5, c0 - 2:c0 + 5], 0, 12)
    block(obstacle, 18, 22, 18, 22)  # central pillar
    classes[14:26, 14:26] = np.where(obstacle[14:26, 14:26], 0, 14)
    amb[15:18, 15:25] = 0.5
    amb[30:36, 14:26] = 0.3
    return encode("open", obstacle, classes, amb, (5.125, 1.375, 1.5707963267948966))


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for doc in (rooms(), aisles(), open_hall()):
        (OUT / f"{doc['name']}.json").write_text(json.dumps(doc, indent=1) + "\n")
        print("\n".join(doc["rows"]), "\n")
