FACTORS = {
    "in": ("cm", 2.54),
    "cm": ("in", 1 / 2.54),
    "kg": ("lb", 2.20462),
    "lb": ("kg", 1 / 2.20462),
}


def convert(value, unit):
    target, factor = FACTORS[unit]
    return round(value * factor, 2), target


if __name__ == "__main__":
    import sys

    amount, unit = sys.argv[1], sys.argv[2]
    print(*convert(float(amount), unit))
