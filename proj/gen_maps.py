#!/usr/bin/env python3
"""One-off generator for the bundled MWH-family maps (run from repo root).

Produces maps/mwh.txt, maps/mwh_m.txt (180-degree rotation of mwh) and
maps/mwh_g.txt. Outputs are committed; this script is kept for regeneration.
"""
import colorsys

ROOM_W, ROOM_H = 7, 5  # interior extents


def build_snake(cols, rows, n_rooms, ids):
    """Rooms in a serpentine chain over a cols x rows room lattice."""
    global ROOM_W, ROOM_H
    W = cols * (ROOM_W + 1) + 1
    H = rows * (ROOM_H + 1) + 1
    grid = [["?"] * W for _ in range(H)]

    # room lattice coordinates in chain order (snake)
    chain = []
    for r in range(rows):
        cs = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
        for c in cs:
            chain.append((c, r))
    chain = chain[:n_rooms]
    room_id = {rc: ids[i] for i, rc in enumerate(chain)}

    def room_origin(c, r):
        return c * (ROOM_W + 1) + 1, r * (ROOM_H + 1) + 1

    def owner(x, y):
        """Nearest room in the lattice for wall-texture assignment."""
        c = min(max((x - 1) // (ROOM_W + 1), 0), cols - 1)
        r = min(max((y - 1) // (ROOM_H + 1), 0), rows - 1)
        if (c, r) in room_id:
            return room_id[(c, r)]
        # lattice slots without a room: fall back to the chain tail
        best = min(chain, key=lambda rc: abs(rc[0] - c) + abs(rc[1] - r))
        return room_id[best]

    # walls everywhere, then carve interiors of used rooms
    for y in range(H):
        for x in range(W):
            grid[y][x] = owner(x, y)
    for (c, r) in chain:
        ox, oy = room_origin(c, r)
        for y in range(oy, oy + ROOM_H):
            for x in range(ox, ox + ROOM_W):
                grid[y][x] = "."

    # doors between consecutive chain rooms, staggered so rooms do not
    # line up into one straight corridor
    for i, ((c1, r1), (c2, r2)) in enumerate(zip(chain, chain[1:])):
        o1x, o1y = room_origin(c1, r1)
        o2x, o2y = room_origin(c2, r2)
        if r1 == r2:  # horizontal neighbours: gap in the shared column
            xw = max(o1x, o2x) - 1
            yd = o1y + (1 if i % 2 == 0 else ROOM_H - 2)
            grid[yd][xw] = "."
        else:  # vertical neighbours: gap in the shared row
            yw = max(o1y, o2y) - 1
            xd = o1x + (1 if i % 2 == 0 else ROOM_W - 2)
            grid[yw][xd] = "."

    last_ox, last_oy = room_origin(*chain[-1])
    goal = (last_ox + ROOM_W // 2, last_oy + ROOM_H // 2)

    # sparse start: BFS-farthest floor cell from the goal
    from collections import deque
    dist = {goal: 0}
    q = deque([goal])
    while q:
        x, y = q.popleft()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if grid[ny][nx] == "." and (nx, ny) not in dist:
                dist[(nx, ny)] = dist[(x, y)] + 1
                q.append((nx, ny))
    far = max(dist, key=dist.get)
    for h, (dx, dy) in (("E", (1, 0)), ("W", (-1, 0)), ("S", (0, 1)), ("N", (0, -1))):
        if grid[far[1] + dy][far[0] + dx] == ".":
            heading = h
            break
    sparse = (far[0], far[1], heading)

    # dense starts: walk rooms in chain order, taking corner-offset cells
    # round-robin until there are exactly 17
    offsets = [(1, 1), (ROOM_W - 2, ROOM_H - 2), (ROOM_W - 2, 1), (1, ROOM_H - 2)]
    dense = []
    for (dx, dy) in offsets:
        for (c, r) in chain:
            ox, oy = room_origin(c, r)
            cand = (ox + dx, oy + dy)
            if cand != goal and cand not in dense:
                dense.append(cand)
            if len(dense) == 17:
                return grid, goal, sparse, dense
    raise RuntimeError("could not place 17 dense starts")


def palette(ids):
    out = {}
    n = len(ids)
    for i, ch in enumerate(ids):
        h = i / n
        r, g, b = colorsys.hsv_to_rgb(h, 0.55, 0.82)
        out[ch] = (int(r * 255), int(g * 255), int(b * 255))
    return out


def emit(path, name, rooms, grid, goal, sparse, dense, pal):
    lines = [f"# {name} scenario map", "[meta]", f"name = {name}", f"rooms = {rooms}",
             "[textures]"]
    for ch, (r, g, b) in sorted(pal.items()):
        lines.append(f"{ch} = {r} {g} {b}")
    lines += ["[goal]", f"{goal[0]} {goal[1]}", "[sparse]",
              f"{sparse[0]} {sparse[1]} {sparse[2]}", "[dense]"]
    for (x, y) in dense:
        lines.append(f"{x} {y}")
    lines.append("[grid]")
    lines += ["".join(row) for row in grid]
    lines.append("[end]")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def rotate180(grid, goal, sparse, dense):
    H, W = len(grid), len(grid[0])
    rg = [[grid[H - 1 - y][W - 1 - x] for x in range(W)] for y in range(H)]
    rot = lambda p: (W - 1 - p[0], H - 1 - p[1])
    flip = {"N": "S", "S": "N", "E": "W", "W": "E"}
    g = rot(goal)
    s = (*rot((sparse[0], sparse[1])), flip[sparse[2]])
    d = [rot(p) for p in dense]
    return rg, g, s, d


ids8 = "12345678"
grid, goal, sparse, dense = build_snake(4, 2, 8, ids8)
emit("maps/mwh.txt", "mwh", 8, grid, goal, sparse, dense, palette(ids8))

rg, g, s, d = rotate180(grid, goal, sparse, dense)
emit("maps/mwh_m.txt", "mwh_m", 8, rg, g, s, d, palette(ids8))

ids19 = "123456789ABCDEFGHIJ"
grid, goal, sparse, dense = build_snake(5, 4, 19, ids19)
emit("maps/mwh_g.txt", "mwh_g", 19, grid, goal, sparse, dense, palette(ids19))

# miniature analogue: six 5x5 rooms in a snake chain
ROOM_W, ROOM_H = 5, 5
ids6 = "123456"
grid, goal, sparse, dense = build_snake(3, 2, 6, ids6)
emit("maps/mini.txt", "mini", 6, grid, goal, sparse, dense, palette(ids6))

rg, g, s, d = rotate180(grid, goal, sparse, dense)
emit("maps/mini_rot.txt", "mini_rot", 6, rg, g, s, d, palette(ids6))

print("maps written")
