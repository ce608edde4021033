"""Fixed reference experiment: corpus recipe, sizes, and algorithm roster.

Desk-scale stand-in for a production-sized pool: ~20k pool utterances with
three low-frequency target domains (about 1k pool presence each), five
high-frequency distractor domains, and 10% noise fragments.

Difficulty is engineered rather than incidental:

- Template and lexicon sampling are Zipf-skewed, so a small random sample of
  a domain leaves its tail uncovered and most tail errors are fixable by
  annotating the right pool utterances.
- Titles, movies, and songs come from one surface family (disjoint value
  sets), and several templates collide across domains ("play X", "more
  about X", "find X"), so unseen values produce real domain confusions.
- Slot types share contexts inside a domain ("find [Title]" vs "find
  [Genre] books" vs "find books by [Author]"), so the tagger must know the
  lexeme, not just the neighbors.
- Values contain function words ("the house by the sea", "lost in winter"),
  which makes span boundaries genuinely uncertain.
- Noise fragments are drawn from the same lexicons and look like slot
  values.
"""

from __future__ import annotations

from itertools import product

from .corpus import SynthDomain, SynthIntent, SynthSpec

_ADJ = [
    "red", "silent", "broken", "golden", "hidden", "lost", "ancient", "burning",
    "frozen", "wild", "quiet", "brave", "dark", "bright", "lonely", "final",
]
_NOUN = [
    "river", "moon", "garden", "city", "crown", "forest", "shadow", "dream",
    "island", "mountain", "sea", "tower", "road", "star", "winter", "harbor",
]
_FIRST = [
    "maya", "elena", "tomas", "junio", "sofia", "marcus", "leila", "viktor",
    "anita", "pavel", "irene", "dario", "nadia", "oskar", "selma", "bruno",
]
_LAST = [
    "chen", "rivera", "novak", "haddad", "okafor", "lind", "moreau", "tanaka",
    "silva", "berg", "kovacs", "duarte", "osei", "walsh",
]
_CITY_A = ["north", "south", "east", "west", "old", "new", "port", "lake"]
_CITY_B = ["bay", "field", "ford", "haven", "ridge", "view", "dale", "brook"]


def _phrases() -> list[str]:
    """One surface family of title-like phrases; slices stay disjoint."""
    out = []
    pairs = list(product(_ADJ, _NOUN))
    for a, n in pairs:
        out.append(f"the {a} {n}")
    for a, n in pairs:
        out.append(f"{a} {n}")
    nouns = list(product(_NOUN, _NOUN))
    for n1, n2 in nouns:
        if n1 != n2:
            out.append(f"the {n1} of the {n2}")
    for n1, n2 in nouns:
        if n1 != n2:
            out.append(f"a {n1} in the {n2}")
    for a, n in pairs:
        out.append(f"{a} in the {n}")
    return out


def _people() -> list[str]:
    return [f"{a} {b}" for a, b in product(_FIRST, _LAST)]


def _cities() -> list[str]:
    return [f"{a} {b}" for a, b in product(_CITY_A, _CITY_B)]


_PREFIXES = (
    "please", "can you", "could you", "hey", "i want to", "ok", "now", "quick", "umm",
)
_SUFFIXES = (
    "please", "for me", "now", "tonight", "right now", "when you can", "thanks",
    "real quick", "okay",
)


def _decorate(bases: tuple[str, ...]) -> tuple[str, ...]:
    """Carrier-phrase variants; bases keep the head ranks, variants the tail."""
    out = list(bases)
    for prefix in _PREFIXES:
        out.extend(f"{prefix} {base}" for base in bases)
    for suffix in _SUFFIXES:
        out.extend(f"{base} {suffix}" for base in bases)
    return tuple(out)


GENRES = ("mystery", "fantasy", "history", "romance", "science", "horror", "poetry", "drama")
FOODS = (
    "mexican food", "thai food", "sushi", "pizza", "burgers", "ramen", "tacos",
    "coffee", "barbecue", "dumplings", "falafel", "pho", "noodles", "pancakes",
    "fried chicken", "salads", "bagels", "curry", "gelato", "sandwiches",
    "pad thai", "dim sum", "poke", "waffles",
)
BUSINESSES = (
    "bank", "pharmacy", "gas station", "book store", "hardware store", "bakery",
    "gym", "car wash", "barber shop", "flower shop", "laundromat", "vet clinic",
    "post office", "coffee shop", "nail salon", "tailor", "bike shop", "dry cleaner",
    "record store", "copy center", "shoe store", "pet groomer", "optician", "locksmith",
)
ITEMS = (
    "batteries", "paper towels", "dog food", "light bulbs", "shampoo", "coffee beans",
    "notebooks", "headphones", "socks", "umbrella", "charger", "toothpaste",
    "detergent", "sponges", "trash bags", "candles",
)
EVENTS = (
    "dentist appointment", "team meeting", "soccer practice", "dinner with sam",
    "oil change", "piano lesson", "book club", "yoga class", "haircut", "interview",
)
DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
TEAMS = (
    "rockets", "pilots", "wolves", "comets", "giants", "rangers", "falcons",
    "bears", "sharks", "kings", "miners", "chiefs",
)


def _head(lexicons: dict, fraction: float = 0.3) -> dict:
    """Grammar writers anticipate only the head of each value list."""
    return {
        slot: tuple(entries[: max(2, int(len(entries) * fraction))])
        for slot, entries in lexicons.items()
    }


def _grammar_block(live: SynthDomain) -> SynthDomain:
    """Restricted twin of a live block: same templates, head values only.

    Stands in for bootstrapped grammar data; phrasing is anticipated well
    enough, but the long tail of slot values only exists in live traffic, so
    the broken mass decomposes into per-value pieces that each need their own
    annotation.
    """
    return SynthDomain(
        name=live.name,
        intents=live.intents,
        lexicons=_head(live.lexicons),
        count=live.count,
        source="grammar",
    )


def reference_synth_spec(seed: int = 104729) -> SynthSpec:
    # Interleaved slices: the four phrase lexicons are disjoint but share the
    # whole word vocabulary, so only full-phrase identity separates domains.
    phrases = _phrases()
    titles = tuple(phrases[0::4][:240])
    movies = tuple(phrases[1::4][:200])
    songs = tuple(phrases[2::4][:180])
    places = tuple(phrases[3::4][:160])
    people = _people()
    authors = tuple(people[0::3][:60])
    actors = tuple(people[1::3][:70])
    artists = tuple(people[2::3][:70])
    cities = tuple(_cities())

    target_count = 1538
    distractor_count = 4615

    books = SynthDomain(
        name="books",
        count=target_count,
        intents=(
            SynthIntent(
                "ReadBookIntent",
                _decorate(
                    (
                        "play [Title]",
                        "read [Title]",
                        "open [Title]",
                        "read me [Title]",
                        "put on [Title]",
                        "read [Title] by [Author]",
                        "start [Title]",
                        "continue [Title]",
                    )
                ),
            ),
            SynthIntent(
                "SearchBookIntent",
                _decorate(
                    (
                        "find [Title]",
                        "find [Genre] books",
                        "find books by [Author]",
                        "search for [Title]",
                        "look up [Author]",
                        "show me [Genre] books",
                        "do you have [Title]",
                    )
                ),
            ),
            SynthIntent(
                "BookInfoIntent",
                _decorate(
                    (
                        "more about [Title]",
                        "who wrote [Title]",
                        "about the book [Title]",
                        "how long is [Title]",
                    )
                ),
            ),
        ),
        lexicons={"Title": titles, "Author": authors, "Genre": GENRES},
    )

    local_search = SynthDomain(
        name="local_search",
        count=target_count,
        intents=(
            SynthIntent(
                "FindPlaceIntent",
                _decorate(
                    (
                        "find [Place]",
                        "find [Food]",
                        "[Food] nearby",
                        "where is [Place]",
                        "navigate to [Place]",
                        "where is the closest [Business]",
                        "find a [Business]",
                        "best [Food] in [City]",
                        "show me [Business] in [City]",
                        "is [Place] open",
                        "whats good in [City]",
                        "i need a [Business]",
                    )
                ),
            ),
            SynthIntent(
                "RatePlaceIntent",
                _decorate(
                    (
                        "how good is [Place]",
                        "reviews for [Place]",
                        "ratings for the [Business]",
                        "reviews for [Food] in [City]",
                        "top rated [Food]",
                        "is [Place] any good",
                    )
                ),
            ),
        ),
        lexicons={"Food": FOODS, "Business": BUSINESSES, "City": cities, "Place": places},
    )

    cinema = SynthDomain(
        name="cinema",
        count=target_count,
        intents=(
            SynthIntent(
                "MovieInfoIntent",
                _decorate(
                    (
                        "more about [Movie]",
                        "tell me about [Movie]",
                        "who stars in [Movie]",
                        "movies with [Actor]",
                        "more about [Actor]",
                        "is [Movie] any good",
                        "how long is [Movie]",
                    )
                ),
            ),
            SynthIntent(
                "ShowtimesIntent",
                _decorate(
                    (
                        "play [Movie]",
                        "showtimes for [Movie]",
                        "put on [Movie]",
                        "showtimes for [Movie] in [City]",
                        "is [Movie] playing near me",
                        "tickets for [Movie]",
                        "play the trailer for [Movie]",
                        "when does [Movie] start",
                    )
                ),
            ),
        ),
        lexicons={"Movie": movies, "Actor": actors, "City": cities},
    )

    music = SynthDomain(
        name="music",
        count=distractor_count,
        intents=(
            SynthIntent(
                "PlayMusicIntent",
                _decorate(
                    (
                        "play [Song]",
                        "play [Artist]",
                        "play [Song] by [Artist]",
                        "play some [Genre] music",
                        "shuffle songs by [Artist]",
                        "put on [Song]",
                        "turn up the music",
                    )
                ),
            ),
        ),
        lexicons={"Artist": artists, "Song": songs, "Genre": GENRES},
    )

    weather = SynthDomain(
        name="weather",
        count=distractor_count,
        intents=(
            SynthIntent(
                "GetWeatherIntent",
                (
                    "weather in [City]",
                    "whats the weather like",
                    "will it rain in [City] on [Day]",
                    "forecast for [Day]",
                    "whats it like in [City]",
                    "do i need a jacket in [City]",
                ),
            ),
        ),
        lexicons={"City": cities, "Day": DAYS},
    )

    shopping = SynthDomain(
        name="shopping",
        count=distractor_count,
        intents=(
            SynthIntent(
                "BuyItemIntent",
                (
                    "buy [Item]",
                    "add [Item] to my cart",
                    "order [Item] again",
                    "reorder [Item]",
                    "how much is [Item]",
                    "track my order",
                ),
            ),
        ),
        lexicons={"Item": ITEMS},
    )

    calendar = SynthDomain(
        name="calendar",
        count=distractor_count,
        intents=(
            SynthIntent(
                "AddEventIntent",
                (
                    "add [Event] to my calendar",
                    "schedule [Event] on [Day]",
                    "move my [Event] to [Day]",
                    "whats on my calendar for [Day]",
                    "cancel my [Event]",
                ),
            ),
        ),
        lexicons={"Event": EVENTS, "Day": DAYS},
    )

    sports = SynthDomain(
        name="sports",
        count=distractor_count,
        intents=(
            SynthIntent(
                "SportsInfoIntent",
                (
                    "score of the [Team] game",
                    "when do the [Team] play",
                    "did the [Team] win",
                    "[Team] schedule for [Day]",
                    "standings for the [Team]",
                ),
            ),
        ),
        lexicons={"Team": TEAMS, "Day": DAYS},
    )

    return SynthSpec(
        domains=(
            _grammar_block(books),
            books,
            _grammar_block(local_search),
            local_search,
            _grammar_block(cinema),
            cinema,
            music,
            weather,
            shopping,
            calendar,
            sports,
        ),
        noise_count=3077,
        seed=seed,
        template_zipf=1.0,
        lexicon_zipf=0.7,
    )


REFERENCE_TARGETS = ("books", "cinema", "local_search")


def reference_experiment_dict(out_dir: str = "reference-out") -> dict:
    """ExperimentConfig payload for the reference run (criterion-scale)."""
    return {
        "corpus": {"synth": "reference"},
        "split": {
            "train_fraction": 0.2,
            "pool_fraction": 0.65,
            "test_fraction": 0.15,
            "seed": 7,
        },
        "targets": list(REFERENCE_TARGETS),
        "algorithms": [
            {"name": "Rand-Uniform"},
            {"name": "Rand-Domain"},
            {"name": "Majority-AS", "iterations": 6},
            {"name": "Majority-CRF", "iterations": 6},
        ],
        "budget_per_target": 600,
        "repeats": 5,
        "seed": 7,
        "out_dir": out_dir,
    }
