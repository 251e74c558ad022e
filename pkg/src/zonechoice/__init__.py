"""School attendance-zone optimization under student school choice.

Pipeline: generate a synthetic district, fit a school-choice model,
sample choice scenarios, search for a feasible zoning minimizing the
expected SES dissimilarity index, and report the outcome.
"""

from zonechoice.district import (
    Block,
    District,
    DomainError,
    FeasibilityParams,
    School,
    SchoolCounts,
    Student,
    Zoning,
    check_contiguity,
    check_population_bounds,
    check_travel_time,
    counts_under_attendance,
    dissimilarity,
    is_feasible,
)

__version__ = "0.1.0"

__all__ = [
    "Block",
    "District",
    "DomainError",
    "FeasibilityParams",
    "School",
    "SchoolCounts",
    "Student",
    "Zoning",
    "check_contiguity",
    "check_population_bounds",
    "check_travel_time",
    "counts_under_attendance",
    "dissimilarity",
    "is_feasible",
    "__version__",
]
