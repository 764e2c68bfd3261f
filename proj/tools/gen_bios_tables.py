#!/usr/bin/env python3
"""Regenerates data/bios_tables.inc.

The bioS domains have fixed sizes (400 first names, 400 middle names, 1000 last
names, 200 cities, 300 universities, 100 majors, 263 employers). Contents are
synthetic single-word strings drawn from a fixed seed so every entry is exactly
one word-level token. Run from the repository root.
"""

import random

SEED = 20240408

ONSETS = ["b", "br", "c", "ch", "cl", "d", "dr", "f", "fl", "g", "gr", "h", "j", "k",
          "kl", "l", "m", "n", "p", "pr", "qu", "r", "s", "sh", "st", "t", "th", "tr",
          "v", "w", "z"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "ia", "io", "ou", "y"]
CODAS = ["", "", "", "n", "r", "l", "s", "th", "m", "nd", "rn", "x", "ck"]

FIRST_END = ["a", "ia", "en", "o", "ie", "an", "is", "el", "yn", "ara", "iel", "ette"]
LAST_END = ["son", "man", "er", "ley", "wick", "berg", "stein", "more", "ford", "ski",
            "ell", "ard", "ington", "ova", "ez", "etti"]
CITY_END = ["ville", "port", "burg", "dale", "field", "haven", "mouth", "ton", "ford",
            "minster", "holm", "stead", "wood", "crest", "gate"]
UNIV_END = ["ridge", "croft", "leigh", "hall", "bury", "court", "mere", "brook"]
EMPLOYER_END = ["corp", "tech", "works", "soft", "labs", "dyne", "tron", "ix", "io",
                "wave", "core", "net", "logic", "forge"]

MAJORS = """Accounting Acoustics Aeronautics Agriculture Anatomy Animation Anthropology
Archaeology Architecture Astronomy Astrophysics Audiology Biochemistry Bioinformatics
Biology Biophysics Botany Cardiology Cartography Ceramics Chemistry Choreography Classics
Climatology Cognition Communications Criminology Cryptography Cybernetics Dance Demography
Dentistry Design Diplomacy Ecology Economics Education Electronics Embryology Engineering
Entomology Epidemiology Ergonomics Ethics Ethnography Film Finance Forestry Genetics
Geography Geology Geophysics Gerontology Glaciology Graphics Histology History Horticulture
Hospitality Hydrology Immunology Informatics Journalism Kinesiology Law Linguistics
Literature Logic Logistics Management Marketing Mathematics Mechanics Medicine Metallurgy
Meteorology Microbiology Mineralogy Music Musicology Mycology Nanotechnology Neuroscience
Nursing Nutrition Oceanography Oncology Optics Optometry Ornithology Paleontology Pathology
Pharmacology Pharmacy Philosophy Photography Physics Physiology Politics Psychology
Radiology Rhetoric Robotics""".split()


def word(rng, syllables, endings):
    parts = []
    for _ in range(syllables):
        parts.append(rng.choice(ONSETS) + rng.choice(VOWELS) + rng.choice(CODAS))
    stem = "".join(parts)
    return (stem + rng.choice(endings)).capitalize()


def draw(rng, count, endings, taken, syllables=(1, 2)):
    out = []
    while len(out) < count:
        w = word(rng, rng.randint(*syllables), endings)
        if len(w) < 4 or len(w) > 14 or w in taken:
            continue
        taken.add(w)
        out.append(w)
    return out


def main():
    rng = random.Random(SEED)
    majors = MAJORS[:100]
    assert len(majors) == 100 and len(set(majors)) == 100
    taken = set(majors)
    tables = {
        "first_names": draw(rng, 400, FIRST_END, taken),
        "middle_names": draw(rng, 400, FIRST_END + LAST_END, taken),
        "last_names": draw(rng, 1000, LAST_END, taken),
        "cities": draw(rng, 200, CITY_END, taken),
        "universities": draw(rng, 300, UNIV_END, taken),
        "majors": majors,
        "employers": draw(rng, 263, EMPLOYER_END, taken),
    }
    with open("data/bios_tables.inc", "w", encoding="utf-8", newline="\n") as f:
        f.write("// Generated by tools/gen_bios_tables.py. Do not edit.\n")
        for name, items in tables.items():
            f.write(f"inline constexpr std::array<std::string_view, {len(items)}> {name} = {{\n")
            for i in range(0, len(items), 8):
                f.write("    " + ", ".join(f'"{w}"' for w in items[i:i + 8]) + ",\n")
            f.write("};\n")


if __name__ == "__main__":
    main()
