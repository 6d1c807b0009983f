"""Deterministic generator for CDC-shaped synthetic tables.

The generated table matches the default 31-column schema. The target is a
noise-free (configurable) function of two categorical columns (topic,
class), one numeric column (yearstart) and a latitude threshold, so a
correctly wired pipeline can fit it almost perfectly and geolocation
ablation has a planted, directional effect. Everything is a pure function
of (n, seed, options): the same draw count is consumed per row no matter
which cells end up missing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .ingest import default_schema
from .rng import SplitMix64

LOCATIONS = [
    ("WA", "Washington"), ("OR", "Oregon"), ("CA", "California"),
    ("NV", "Nevada"), ("ID", "Idaho"), ("MT", "Montana"),
    ("UT", "Utah"), ("AZ", "Arizona"), ("CO", "Colorado"),
    ("NM", "New Mexico"), ("WY", "Wyoming"), ("AK", "Alaska"),
]
CLASSES = ["Healthy Aging", "Cognitive Decline", "Risk Factors",
           "Screenings & Vaccines"]
CLASS_EFFECT = [0.0, 12.0, 7.0, 3.0]
TOPICS = ["Mental Health", "Nutrition", "Physical Health", "Sleep",
          "Caregiving"]
TOPIC_EFFECT = [9.0, 22.0, 30.0, 4.0, 15.0]
QUESTIONS = {
    "Mental Health": [
        "Percentage of older adults who are experiencing frequent mental distress",
        "Mean number of days with poor mental health in the past month",
        "Percentage of older adults who reported feeling socially isolated",
    ],
    "Nutrition": [
        "Percentage of older adults who are eating fewer than one fruit daily",
        "Percentage of older adults who are currently obese",
        "Percentage of older adults with low vegetable intake, excluding juices",
    ],
    "Physical Health": [
        'Percentage of older adults who self-reported that their health is "good", "very good", or "excellent"',
        "Mean number of days with activity limitations in the past month",
        "Percentage of older adults with arthritis-attributable activity limits",
    ],
    "Sleep": [
        "Percentage of older adults sleeping fewer than six hours per night",
        "Mean number of nights with disturbed sleep in the past week",
        "Percentage of older adults reporting daytime sleepiness",
    ],
    "Caregiving": [
        "Percentage of older adults currently providing care to a friend or family member",
        "Percentage of older adults who expect to provide care in the next two years",
        "Mean number of caregiving hours per week among caregivers",
    ],
}
LINESPREAD = ["single", "double", "adjusted"]
STRAT_BY_CATEGORY = {
    "Age Group": ["50-64", "65 or older", "Overall"],
    "Gender": ["Male", "Female"],
}
RACE = ["White", "Black", "Hispanic", "Asian", "Overall"]

LATITUDE_CUT = 40.0
GEO_EFFECT = 6.0
YEAR_EFFECT = 1.5


@dataclass(frozen=True)
class SynthOptions:
    noise_sd: float = 0.0
    plant_geo: bool = True
    missing_target_rate: float = 0.01
    missing_geo_rate: float = 0.02


def target_value(topic_i: int, class_i: int, year: int, latitude: float,
                 plant_geo: bool = True) -> float:
    y = TOPIC_EFFECT[topic_i] + CLASS_EFFECT[class_i] + YEAR_EFFECT * (year - 2015)
    if plant_geo and latitude >= LATITUDE_CUT:
        y += GEO_EFFECT
    return y


def generate_rows(n: int, seed: int = 42,
                  options: SynthOptions = SynthOptions()):
    """Header plus n rows of string cells ('' = missing)."""
    rng = SplitMix64(seed)
    header = default_schema().names
    flat_questions = [(ti, q) for ti, t in enumerate(TOPICS) for q in QUESTIONS[t]]
    rows = []
    for i in range(n):
        year = 2015 + rng.next_below(8)
        yearend = year + rng.next_below(2)
        yearend_missing = rng.next_float() < 0.03
        loc_i = rng.next_below(len(LOCATIONS))
        linespread = LINESPREAD[rng.next_below(len(LINESPREAD))]
        linespread_missing = rng.next_float() < 0.04
        class_i = rng.next_below(len(CLASSES))
        topic_i = rng.next_below(len(TOPICS))
        q_j = rng.next_below(3)
        qi = topic_i * 3 + q_j
        question = flat_questions[qi][1]
        lat = 32.0 + rng.next_float() * 17.0
        lon = -124.0 + rng.next_float() * 12.0
        geo_missing = rng.next_float() < options.missing_geo_rate
        cat1 = ("Age Group", "Gender")[rng.next_below(2)]
        strat = STRAT_BY_CATEGORY[cat1][rng.next_below(len(STRAT_BY_CATEGORY[cat1]))]
        cat2 = ("Race/Ethnicity", "Overall")[rng.next_below(2)]
        cat2_missing = rng.next_float() < 0.05
        strat2 = RACE[rng.next_below(len(RACE))]
        target_missing = rng.next_float() < options.missing_target_rate

        y = target_value(topic_i, class_i, year, lat, options.plant_geo)
        if options.noise_sd > 0.0:
            # Box-Muller from two stream uniforms
            u1 = max(rng.next_float(), 1e-12)
            u2 = rng.next_float()
            y += options.noise_sd * math.sqrt(-2.0 * math.log(u1)) * \
                math.cos(2.0 * math.pi * u2)

        abbr, desc = LOCATIONS[loc_i]
        y_s = f"{y:.4f}"
        row = {
            "rowid": str(i + 1),
            "yearstart": str(year),
            "yearend": "" if yearend_missing else str(yearend),
            "locationabbr": abbr,
            "locationdesc": desc,
            "datasource": "BRFSS",
            "linespread": "" if linespread_missing else linespread,
            "class": CLASSES[class_i],
            "topic": TOPICS[topic_i],
            "question": question,
            "questionid": f"Q{qi + 1:02d}",
            "response": "",
            "data_value_unit": "%",
            "data_value_type": "Percentage",
            "data_value": "" if target_missing else y_s,
            "data_value_alt": y_s,
            "data_value_footnote_symbol": "",
            "data_value_footnote": "",
            "low_confidence_limit": f"{y - 2.0:.4f}",
            "high_confidence_limit": f"{y + 2.0:.4f}",
            "stratificationcategory1": cat1,
            "stratification": strat,
            "stratificationcategory2": "" if cat2_missing else cat2,
            "stratification2": strat2,
            "geolocation": "" if geo_missing else f"POINT ({lon:.4f} {lat:.4f})",
            "classid": f"C{class_i + 1:02d}",
            "topicid": f"T{topic_i + 1:02d}",
            "locationid": str(100 + loc_i),
            "responseid": "",
            "stratificationcategoryid1": "AGE" if cat1 == "Age Group" else "GEN",
            "stratificationid1": f"S{1 + rng.next_below(9)}",
        }
        rows.append([row[name] for name in header])
    return header, rows


def write_csv(path, n: int, seed: int = 42,
              options: SynthOptions = SynthOptions()) -> None:
    header, rows = generate_rows(n, seed, options)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
