from dataclasses import dataclass
from typing import Tuple

import numpy as np

DESCRIPTION_DIM = 150
USER_TYPES = ("individual", "organization")

# Frozen lookup tables; position + 1 is the code, unknown maps to 0.
COUNTRY_CODES = tuple(
    """
    AD AE AF AG AI AL AM AO AQ AR AS AT AU AW AX AZ BA BB BD BE BF BG BH BI BJ BL BM BN BO BQ
    BR BS BT BV BW BY BZ CA CC CD CF CG CH CI CK CL CM CN CO CR CU CV CW CX CY CZ DE DJ DK DM
    DO DZ EC EE EG EH ER ES ET FI FJ FK FM FO FR GA GB GD GE GF GG GH GI GL GM GN GP GQ GR GS
    GT GU GW GY HK HM HN HR HT HU ID IE IL IM IN IO IQ IR IS IT JE JM JO JP KE KG KH KI KM KN
    KP KR KW KY KZ LA LB LC LI LK LR LS LT LU LV LY MA MC MD ME MF MG MH MK ML MM MN MO MP MQ
    MR MS MT MU MV MW MX MY MZ NA NC NE NF NG NI NL NO NP NR NU NZ OM PA PE PF PG PH PK PL PM
    PN PR PS PT PW PY QA RE RO RS RU RW SA SB SC SD SE SG SH SI SJ SK SL SM SN SO SR SS ST SV
    SX SY SZ TC TD TF TG TH TJ TK TL TM TN TO TR TT TV TW TZ UA UG UM US UY UZ VA VC VE VG VI
    VN VU WF WS YE YT ZA ZM ZW
    """.split()
)
LANGUAGE_CODES = (
    "javascript", "python", "java", "go", "c++", "c", "ruby", "php", "c#", "typescript",
    "shell", "objective-c", "swift", "scala", "rust", "kotlin", "perl", "lua", "haskell", "r",
    "html", "css", "powershell", "clojure", "erlang", "elixir", "groovy", "dart", "julia", "matlab",
    "assembly", "makefile", "coffeescript", "vim script", "emacs lisp", "ocaml", "f#", "visual basic",
    "tex", "jupyter notebook", "vue", "dockerfile", "hcl", "nix", "zig", "fortran", "cuda", "sql",
    "plpgsql", "smarty",
)
_COUNTRY_INDEX = {code: i + 1 for i, code in enumerate(COUNTRY_CODES)}
_LANGUAGE_INDEX = {name: i + 1 for i, name in enumerate(LANGUAGE_CODES)}


def country_code(country: str) -> int:
    return _COUNTRY_INDEX.get((country or "").strip().upper(), 0)


def language_code(language: str) -> int:
    return _LANGUAGE_INDEX.get((language or "").strip().lower(), 0)


def user_type_onehot(user_type: str) -> Tuple[float, float]:
    return (0.0, 1.0) if (user_type or "").strip().lower() == "organization" else (1.0, 0.0)


@dataclass(frozen=True)
class RawEventRecord:
    repo_id: str
    user_id: str
    event_type_name: str
    timestamp: int


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    user_type: str
    country: str
    github_impact: float
    follower_count: int
    followee_count: int
    repos_created_count: int
    forks_on_created_repos: int
    watches_on_created_repos: int

    @property
    def user_type_onehot(self) -> Tuple[float, float]:
        return user_type_onehot(self.user_type)

    @property
    def country_code(self) -> int:
        return country_code(self.country)


@dataclass(frozen=True, eq=False)
class RepoProfile:
    repo_id: str
    creator_user_id: str
    main_language_id: int
    creator_type_onehot: Tuple[float, float]
    description_vector: np.ndarray

    @property
    def attributes(self) -> np.ndarray:
        """Node attribute vector: language (1), creator type (2), description (150)."""
        return np.concatenate(
            [[float(self.main_language_id)], self.creator_type_onehot, self.description_vector]
        ).astype(np.float64)


REPO_ATTRIBUTE_DIM = 1 + 2 + DESCRIPTION_DIM
