#!/usr/bin/env python3
"""Rebuilds the categorical benchmark CSVs in this directory.

Each dataset is regenerated from its public definition: exhaustive
enumeration where the original is itself an enumeration, and a fixed-seed
sample where the original came from a noisy generator. Run from anywhere:

    python3 datasets/generate.py
"""

import csv
import itertools
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))


def write(name, header, rows):
    with open(os.path.join(HERE, f"{name}.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    # Integer codes are category labels, not magnitudes.
    with open(os.path.join(HERE, f"{name}.schema"), "w") as f:
        f.write("*: categorical\n")


def tic_tac_toe():
    lines = [(0, 1, 2), (3, 4, 5), (6, 7, 8), (0, 3, 6), (1, 4, 7), (2, 5, 8), (0, 4, 8), (2, 4, 6)]

    def winner(b):
        for i, j, k in lines:
            if b[i] != "b" and b[i] == b[j] == b[k]:
                return b[i]
        return None

    ends = set()

    def play(board, player):
        w = winner(board)
        if w or "b" not in board:
            ends.add(tuple(board))
            return
        for i in range(9):
            if board[i] == "b":
                board[i] = player
                play(board, "o" if player == "x" else "x")
                board[i] = "b"

    play(["b"] * 9, "x")
    squares = ["top-left", "top-middle", "top-right", "middle-left", "middle-middle",
               "middle-right", "bottom-left", "bottom-middle", "bottom-right"]
    rows = [list(b) + ["positive" if winner(b) == "x" else "negative"] for b in sorted(ends)]
    write("tic-tac-toe", squares + ["class"], rows)


def balance_scale():
    rows = []
    for lw, ld, rw, rd in itertools.product(range(1, 6), repeat=4):
        left, right = lw * ld, rw * rd
        cls = "L" if left > right else "R" if right > left else "B"
        rows.append([lw, ld, rw, rd, cls])
    write("balance-scale", ["left-weight", "left-distance", "right-weight", "right-distance", "class"], rows)


def monks(rng):
    domains = [(1, 2, 3), (1, 2, 3), (1, 2), (1, 2, 3), (1, 2, 3, 4), (1, 2)]
    rules = {
        "monks-1": lambda a: a[0] == a[1] or a[4] == 1,
        "monks-2": lambda a: sum(v == 1 for v in a) == 2,
        "monks-3": lambda a: (a[4] == 3 and a[3] == 1) or (a[4] != 4 and a[1] != 3),
    }
    header = [f"a{i}" for i in range(1, 7)] + ["class"]
    for name, rule in rules.items():
        rows = []
        for a in itertools.product(*domains):
            label = rule(a)
            # The third problem carries 5% label noise.
            if name == "monks-3" and rng.random() < 0.05:
                label = not label
            rows.append(list(a) + [int(label)])
        write(name, header, rows)


LED_SEGMENTS = [
    (1, 1, 1, 0, 1, 1, 1), (0, 0, 1, 0, 0, 1, 0), (1, 0, 1, 1, 1, 0, 1), (1, 0, 1, 1, 0, 1, 1),
    (0, 1, 1, 1, 0, 1, 0), (1, 1, 0, 1, 0, 1, 1), (1, 1, 0, 1, 1, 1, 1), (1, 0, 1, 0, 0, 1, 0),
    (1, 1, 1, 1, 1, 1, 1), (1, 1, 1, 1, 0, 1, 1),
]


def led(rng, name, irrelevant, n=1000, noise=0.1):
    rows = []
    for _ in range(n):
        digit = rng.randrange(10)
        lit = [s ^ (rng.random() < noise) for s in LED_SEGMENTS[digit]]
        extra = [rng.randrange(2) for _ in range(irrelevant)]
        rows.append(lit + extra + [digit])
    header = [f"s{i}" for i in range(1, 8)] + [f"r{i}" for i in range(1, irrelevant + 1)] + ["digit"]
    write(name, header, rows)


def contact_lenses():
    rows = []
    for age, rx, astig, tear in itertools.product(
        ["young", "pre-presbyopic", "presbyopic"], ["myope", "hypermetrope"], ["no", "yes"], ["reduced", "normal"]
    ):
        if tear == "reduced":
            cls = "none"
        elif astig == "no":
            cls = "none" if (age == "presbyopic" and rx == "myope") else "soft"
        elif rx == "myope":
            cls = "hard"
        else:
            cls = "hard" if age == "young" else "none"
        rows.append([age, rx, astig, tear, cls])
    write("contact-lenses", ["age", "prescription", "astigmatic", "tear-rate", "lenses"], rows)


def multiplexer(address_bits):
    data_bits = 2 ** address_bits
    rows = []
    for bits in itertools.product((0, 1), repeat=address_bits + data_bits):
        address = int("".join(map(str, bits[:address_bits])), 2)
        rows.append(list(bits) + [bits[address_bits + address]])
    header = [f"a{i}" for i in range(address_bits)] + [f"d{i}" for i in range(data_bits)] + ["class"]
    write(f"mux{address_bits + data_bits}", header, rows)


def parity5_5():
    rows = [list(b) + [sum(b[:5]) % 2] for b in itertools.product((0, 1), repeat=10)]
    write("parity5+5", [f"b{i}" for i in range(10)] + ["class"], rows)


def main():
    rng = random.Random(20180801)
    tic_tac_toe()
    balance_scale()
    monks(rng)
    led(rng, "led7", 0)
    led(rng, "led24", 17)
    contact_lenses()
    multiplexer(2)
    multiplexer(3)
    parity5_5()


if __name__ == "__main__":
    main()
