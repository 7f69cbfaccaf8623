"""Event tables shared by GLM modeling, epoching and artifact injection."""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import ParseError, UnknownTrialType


@dataclass(frozen=True)
class StimEvent:
    """One stimulus or artifact event.

    ``channels`` is None for events affecting all channels; artifact
    timing tables use an explicit channel list.
    """

    onset: float
    duration: float
    value: float
    trial_type: str
    channels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.onset < 0:
            raise ParseError(f"event onset must be >= 0, got {self.onset}")
        if self.duration < 0:
            raise ParseError(f"event duration must be >= 0, got {self.duration}")


@dataclass(frozen=True)
class StimTable:
    """Ordered table of stimulus events."""

    events: tuple[StimEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[StimEvent]:
        return iter(self.events)

    def __getitem__(self, i) -> StimEvent:
        return self.events[i]

    @property
    def trial_types(self) -> list[str]:
        return [e.trial_type for e in self.events]

    def select(self, trial_types: Iterable[str]) -> "StimTable":
        wanted = set(trial_types)
        return StimTable([e for e in self.events if e.trial_type in wanted])

    def select_prefix(self, prefix: str) -> "StimTable":
        return StimTable(
            [e for e in self.events if e.trial_type.startswith(prefix)]
        )

    def sorted_by_onset(self) -> "StimTable":
        return StimTable(sorted(self.events, key=lambda e: e.onset))

    def with_event(self, event: StimEvent) -> "StimTable":
        return StimTable(self.events + (event,))


def rename_events(stim: StimTable, mapping: Mapping[str, str],
                  strict: bool = False) -> StimTable:
    """Replace trial-type labels according to ``mapping``.

    Labels not covered by the mapping stay untouched and row order is
    preserved.  In strict mode a mapping key that matches no event raises
    :class:`UnknownTrialType`.
    """
    if strict:
        present = set(e.trial_type for e in stim)
        missing = sorted(set(mapping) - present)
        if missing:
            raise UnknownTrialType(f"trial types not present: {missing}")
    return StimTable(
        [replace(e, trial_type=mapping.get(e.trial_type, e.trial_type))
         for e in stim]
    )


_HEADER = ["onset", "duration", "value", "trial_type"]


def _fmt(x: float) -> str:
    # repr gives the shortest round-trip decimal form; keeps rewrites
    # byte-identical
    return repr(float(x))


def write_stim_csv(stim: StimTable, path) -> None:
    """Write an RFC-4180 CSV with '.' decimal separator.

    The ``channels`` column is emitted only when at least one event
    carries a channel list; lists are ';'-joined.
    """
    has_channels = any(e.channels is not None for e in stim)
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(_HEADER + (["channels"] if has_channels else []))
    for e in stim:
        row = [_fmt(e.onset), _fmt(e.duration), _fmt(e.value), e.trial_type]
        if has_channels:
            row.append(";".join(e.channels) if e.channels is not None else "")
        writer.writerow(row)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_stim_csv(path) -> StimTable:
    """Read a stimulus table written by :func:`write_stim_csv`."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(_io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise ParseError(f"empty stimulus file: {path}")
    header = rows[0]
    if header[: len(_HEADER)] != _HEADER:
        raise ParseError(
            f"stim csv header must start with {_HEADER}, got {header}"
        )
    has_channels = len(header) > len(_HEADER) and header[4] == "channels"
    events = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            onset, duration, value = (float(row[0]), float(row[1]), float(row[2]))
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}:{i}: bad numeric field ({exc})") from None
        trial_type = row[3]
        channels = None
        if has_channels and len(row) > 4 and row[4] != "":
            channels = tuple(row[4].split(";"))
        events.append(StimEvent(onset, duration, value, trial_type, channels))
    return StimTable(events)
