"""Registry of the four BNCI-Horizon motor-imagery dataset selections.

Each descriptor pins down one benchmark dataset: which BNCI source it comes
from, which cue classes are kept, which subjects are dropped (near-chance
performers excluded from the benchmark definition), and the metadata the
converted output must satisfy. Conversion refuses to emit a container that
disagrees with its descriptor, so these numbers double as the contract a
downloaded file is checked against.

Sessions are numbered 1 (training recordings, the "T" file) and 2
(evaluation recordings, the "E" file) following the BNCI file naming.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SESSION_SUFFIX = {1: "T", 2: "E"}


@dataclass(frozen=True)
class DatasetDescriptor:
    """One dataset selection plus the metadata its containers must match."""

    id: str
    source: str  # BNCI dataset code, also the download directory name
    file_prefix: str  # subject files are <prefix><NN><T|E>.mat
    n_subjects: int
    n_channels: int  # EEG leads kept; trailing EOG columns are dropped
    fs: float
    classes: tuple[int, ...]  # source cue codes kept, in output label order
    class_names: tuple[str, ...]
    trials_session1: int  # selected trials in every subject's training session
    excluded_subjects: frozenset[int] = field(default_factory=frozenset)
    cue_offset_s: float = 0.0  # trial marker to imagery onset
    imagery_len_s: float = 0.0  # imagery period recorded in the event table
    to_microvolts: float = 1.0  # source unit scale; container samples are uV

    def validate(self) -> None:
        if self.id not in REGISTRY and REGISTRY:
            raise ValueError(f"unknown dataset id {self.id!r}")
        if len(self.classes) != len(set(self.classes)):
            raise ValueError("class codes must be distinct")
        if len(self.classes) != len(self.class_names):
            raise ValueError("one name per class code")
        if self.n_channels < 1 or self.fs <= 0:
            raise ValueError("descriptor needs positive channel count and fs")
        if self.imagery_len_s <= 0:
            raise ValueError("imagery period must be positive")
        if not self.excluded_subjects <= set(range(1, self.n_subjects + 1)):
            raise ValueError("excluded subjects outside subject range")

    def mat_name(self, subject: int, session: int) -> str:
        return f"{self.file_prefix}{subject:02d}{SESSION_SUFFIX[session]}.mat"

    def out_name(self, subject: int, session: int) -> str:
        return f"{self.id}_subject{subject}_session{session}.swpc"

    def label_for(self, code: int) -> int | None:
        """Container label 1..K for a kept cue code, None for a dropped one."""
        try:
            return self.classes.index(code) + 1
        except ValueError:
            return None


# Imagery timing follows the BNCI documentation for each paradigm: the cue
# appears cue_offset_s after the trial marker and the subject holds the
# imagery for imagery_len_s. The converter records that full period and
# leaves cropping to the consumer.
REGISTRY: dict[str, DatasetDescriptor] = {}
REGISTRY.update(
    {
        "MI1": DatasetDescriptor(
            id="MI1",
            source="001-2014",
            file_prefix="A",
            n_subjects=9,
            n_channels=22,
            fs=250.0,
            classes=(1, 2),
            class_names=("left hand", "right hand"),
            trials_session1=144,
            excluded_subjects=frozenset({5, 6}),
            cue_offset_s=2.0,
            imagery_len_s=4.0,
        ),
        "MI2": DatasetDescriptor(
            id="MI2",
            source="001-2014",
            file_prefix="A",
            n_subjects=9,
            n_channels=22,
            fs=250.0,
            classes=(1, 2, 3, 4),
            class_names=("left hand", "right hand", "feet", "tongue"),
            trials_session1=288,
            excluded_subjects=frozenset(),
            cue_offset_s=2.0,
            imagery_len_s=4.0,
        ),
        "MI3": DatasetDescriptor(
            id="MI3",
            source="002-2014",
            file_prefix="S",
            n_subjects=14,
            n_channels=15,
            fs=512.0,
            classes=(1, 2),
            class_names=("right hand", "feet"),
            trials_session1=100,
            excluded_subjects=frozenset({10}),
            cue_offset_s=3.0,
            imagery_len_s=5.0,
        ),
        "MI4": DatasetDescriptor(
            id="MI4",
            source="004-2014",
            file_prefix="B",
            n_subjects=9,
            n_channels=3,
            fs=250.0,
            classes=(1, 2),
            class_names=("left hand", "right hand"),
            trials_session1=60,
            excluded_subjects=frozenset({2, 3}),
            cue_offset_s=3.0,
            imagery_len_s=4.5,
        ),
    }
)

for _d in REGISTRY.values():
    _d.validate()
