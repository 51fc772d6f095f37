"""Class label constants and their manifest spellings."""

SPOOF = 0
LIVE = 1
UNLABELED = -1

LABEL_NAMES = {SPOOF: "spoof", LIVE: "live"}
NAME_TO_LABEL = {v: k for k, v in LABEL_NAMES.items()}


def label_name(label: int) -> str:
    return LABEL_NAMES[label]


def parse_label(name: str) -> int:
    try:
        return NAME_TO_LABEL[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown label {name!r}, expected one of {sorted(NAME_TO_LABEL)}")
