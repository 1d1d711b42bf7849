"""Token alphabet, synthetic verifiable tasks, the binary verifier and length shaping.

Responses follow a strict delimiter protocol: free tokens, then ``A``, the
answer digits, and the end-of-sequence token ``E``.  For example the task
``7+5=`` (mod 10) accepts ``A2E`` and also ``93A2E``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation

DEFAULT_SYMBOLS = tuple("0123456789") + ("+", "*", "=", "A", "E")
ANSWER = "A"
EOS = "E"


@dataclass(frozen=True)
class Vocab:
    symbols: tuple[str, ...] = DEFAULT_SYMBOLS
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(set(symbols)) != len(symbols):
            raise ConfigurationError("vocabulary symbols must be distinct")
        if not 14 <= len(symbols) <= 64:
            raise ConfigurationError(f"vocabulary size must be in [14, 64], got {len(symbols)}")
        for required in tuple("0123456789") + ("+", "*", "=", ANSWER, EOS):
            if required not in symbols:
                raise ConfigurationError(f"vocabulary is missing required symbol {required!r}")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    @property
    def answer_id(self) -> int:
        return self._index[ANSWER]

    def encode(self, text: str) -> tuple[int, ...]:
        try:
            return tuple(self._index[ch] for ch in text)
        except KeyError as exc:
            raise ConfigurationError(f"symbol {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.symbols[i] for i in ids)


VOCAB = Vocab()


class TaskKind(str, enum.Enum):
    ADD_MOD = "ADD_MOD"
    MUL_MOD = "MUL_MOD"
    COPY = "COPY"

    @classmethod
    def parse(cls, value: "TaskKind | str") -> "TaskKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ConfigurationError(f"unsupported task kind {value!r}; valid kinds: {valid}") from None


@dataclass(frozen=True)
class Task:
    kind: TaskKind
    operands: tuple[int, ...]
    modulus: int
    question: tuple[int, ...]
    ground_truth: tuple[int, ...]

    def question_text(self, vocab: Vocab = VOCAB) -> str:
        return vocab.decode(self.question)

    def answer_text(self, vocab: Vocab = VOCAB) -> str:
        return vocab.decode(self.ground_truth)

    def to_record(self, vocab: Vocab = VOCAB) -> dict:
        return {
            "task_kind": self.kind.value,
            "operands": list(self.operands),
            "modulus": self.modulus,
            "question": self.question_text(vocab),
            "ground_truth": self.answer_text(vocab),
        }


def _check_modulus(kind: TaskKind, modulus: int) -> None:
    if modulus < 2:
        raise ConfigurationError(f"modulus must be >= 2, got {modulus}")
    if kind in (TaskKind.ADD_MOD, TaskKind.MUL_MOD) and modulus > 100:
        # answers are residues, which must fit in two digits
        raise ConfigurationError(f"modulus {modulus} does not fit in two answer digits")


def make_task(kind: TaskKind | str, operands: Sequence[int], modulus: int,
              vocab: Vocab = VOCAB) -> Task:
    """Render a task from explicit operands."""
    kind = TaskKind.parse(kind)
    _check_modulus(kind, modulus)
    a, b = (int(x) for x in operands)
    if not (0 <= a < modulus and 0 <= b < modulus):
        raise ConfigurationError(f"operands {a}, {b} must lie in [0, {modulus})")
    if kind is TaskKind.ADD_MOD:
        question, answer = f"{a}+{b}=", str((a + b) % modulus)
    elif kind is TaskKind.MUL_MOD:
        question, answer = f"{a}*{b}=", str((a * b) % modulus)
    else:
        question, answer = f"{a}{b}=", f"{a}{b}"
    return Task(kind, (a, b), modulus, vocab.encode(question), vocab.encode(answer))


def generate_task(rng_seed: int, task_kind: TaskKind | str, modulus: int,
                  vocab: Vocab = VOCAB) -> Task:
    """Draw both operands uniformly from ``[0, modulus)`` using ``rng_seed``."""
    kind = TaskKind.parse(task_kind)
    _check_modulus(kind, modulus)
    rng = np.random.default_rng(rng_seed)
    a, b = rng.integers(0, modulus, size=2)
    return make_task(kind, (int(a), int(b)), modulus, vocab)


def all_tasks(task_kind: TaskKind | str, modulus: int, vocab: Vocab = VOCAB) -> list[Task]:
    kind = TaskKind.parse(task_kind)
    return [make_task(kind, (a, b), modulus, vocab) for a in range(modulus) for b in range(modulus)]


def task_stream(seed: int, task_kind: TaskKind | str, modulus: int,
                namespace: int = 0, vocab: Vocab = VOCAB) -> Iterator[Task]:
    """Endless deterministic task stream; different namespaces never share seeds."""
    index = 0
    while True:
        child = np.random.SeedSequence([seed, namespace, index])
        yield generate_task(int(child.generate_state(1)[0]), task_kind, modulus, vocab)
        index += 1


def render_response(task: Task, vocab: Vocab = VOCAB) -> tuple[int, ...]:
    """The canonical correct response ``A<answer>E``."""
    return (vocab.answer_id, *task.ground_truth, vocab.eos_id)


def verify(response: Sequence[int], task: Task, vocab: Vocab = VOCAB) -> int:
    """Return +1 if the response carries exactly the ground truth, else -1.

    The response must end with its first ``E``; the answer is everything
    between the first ``A`` and that ``E``.
    """
    response = list(response)
    eos = vocab.eos_id
    if eos not in response:
        return -1
    end = response.index(eos)
    if end != len(response) - 1:
        return -1
    body = response[:end]
    if vocab.answer_id not in body:
        return -1
    start = body.index(vocab.answer_id)
    return 1 if tuple(body[start + 1:]) == tuple(task.ground_truth) else -1


@dataclass(frozen=True)
class RewardOutcome:
    base_reward: int
    length_penalty: float
    shaped_reward: float
    truncated: bool = False
    repetition_truncated: bool = False


def shape_reward(base_reward: int, response_length: int, soft_limit: int, hard_limit: int,
                 truncated: bool = False, repetition_truncated: bool = False) -> RewardOutcome:
    """Linear overlong penalty: 0 up to ``soft_limit``, reaching -1 at ``hard_limit``."""
    if not 0 < soft_limit < hard_limit:
        raise ConfigurationError(f"need 0 < soft_limit < hard_limit, got {soft_limit}, {hard_limit}")
    if base_reward not in (-1, 1):
        raise ContractViolation(f"base reward must be -1 or +1, got {base_reward}")
    if not 0 <= response_length <= hard_limit:
        raise ContractViolation(
            f"response length {response_length} outside [0, {hard_limit}]; truncate before shaping")
    if truncated and response_length != hard_limit:
        raise ContractViolation("a truncated response must have exactly hard_limit tokens")
    if response_length <= soft_limit:
        penalty = 0.0
    else:
        penalty = -(response_length - soft_limit) / (hard_limit - soft_limit)
    shaped = min(1.0, max(-1.0, base_reward + penalty))
    return RewardOutcome(base_reward, penalty, shaped, truncated, repetition_truncated)


def write_manifest(tasks: Iterable[Task], path: str | Path, vocab: Vocab = VOCAB) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for task in tasks:
            fh.write(json.dumps(task.to_record(vocab)) + "\n")


def read_manifest(path: str | Path, vocab: Vocab = VOCAB) -> list[Task]:
    """Load a task manifest, checking each record re-renders to the stored strings."""
    tasks = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            task = make_task(rec["task_kind"], rec["operands"], rec["modulus"], vocab)
            if task.question_text(vocab) != rec["question"] or task.answer_text(vocab) != rec["ground_truth"]:
                raise ConfigurationError(f"{path}:{lineno}: record does not match its operands")
            tasks.append(task)
    return tasks
