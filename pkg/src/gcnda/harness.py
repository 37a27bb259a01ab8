"""Cross-domain experiment protocol: train on a source domain, test on a target.

Also holds the synthetic domain-shift corpus used when the real review
corpora are not available, gate heatmap export and timing summaries.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines as B
from . import model as M
from .config import ExperimentConfig
from .tensor import make_rng
from .text import DomainDataset, Example, Vocabulary, build_vocab, encode_batch, load_embeddings, random_embeddings, split_dataset
from .training import Split, TrainReport, evaluate, fit

log = logging.getLogger(__name__)

GATED = ("glu", "gtu", "gtru")


class ProtocolError(RuntimeError):
    """The source/target separation of an experiment was violated."""


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


@dataclass
class SyntheticCorpusSpec:
    """Sentences built from shared and domain-specific polarity words plus domain noise.

    Lexicons left empty are generated as ``pos3``, ``neg3`` (shared),
    ``books_pos3`` (domain polarity) and ``books_w3`` (domain noise).
    """

    domains: Sequence[str] = ("books", "electronics")
    shared_pos: list[str] = field(default_factory=list)
    shared_neg: list[str] = field(default_factory=list)
    domain_pos: dict[str, list[str]] = field(default_factory=dict)
    domain_neg: dict[str, list[str]] = field(default_factory=dict)
    noise: dict[str, list[str]] = field(default_factory=dict)
    shared_size: int = 20
    domain_polarity_size: int = 20
    noise_size: int = 200
    sentence_length: tuple[int, int] = (8, 20)
    polarity_count: tuple[int, int] = (2, 4)
    mix_ratio: float = 0.5
    size: int = 2000
    seed: int = 0

    def __post_init__(self):
        self.domains = list(self.domains)
        if len(self.domains) < 2 or len(set(self.domains)) != len(self.domains):
            raise ValueError("need at least two distinct domain names")
        if not self.shared_pos:
            self.shared_pos = [f"pos{i}" for i in range(self.shared_size)]
        if not self.shared_neg:
            self.shared_neg = [f"neg{i}" for i in range(self.shared_size)]
        for dom in self.domains:
            self.domain_pos.setdefault(dom, [f"{dom}_pos{i}" for i in range(self.domain_polarity_size)])
            self.domain_neg.setdefault(dom, [f"{dom}_neg{i}" for i in range(self.domain_polarity_size)])
            self.noise.setdefault(dom, [f"{dom}_w{i}" for i in range(self.noise_size)])
        self._check()

    def lexicons(self) -> dict[str, list[str]]:
        out = {"shared_pos": self.shared_pos, "shared_neg": self.shared_neg}
        for dom in self.domains:
            out[f"{dom}_pos"] = self.domain_pos[dom]
            out[f"{dom}_neg"] = self.domain_neg[dom]
            out[f"{dom}_noise"] = self.noise[dom]
        return out

    def _check(self) -> None:
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ValueError(f"mix_ratio must be in [0, 1], got {self.mix_ratio}")
        lo, hi = self.sentence_length
        plo, phi = self.polarity_count
        if not (1 <= plo <= phi <= lo <= hi):
            raise ValueError("need 1 <= polarity_count <= sentence_length bounds")
        seen: dict[str, str] = {}
        for name, words in self.lexicons().items():
            if not words:
                raise ValueError(f"lexicon {name} is empty")
            if len(set(words)) != len(words):
                raise ValueError(f"lexicon {name} repeats a word")
            for w in words:
                if w in seen:
                    raise ValueError(f"word {w!r} appears in lexicons {seen[w]} and {name}")
                seen[w] = name


def generate_synthetic(spec: SyntheticCorpusSpec) -> dict[str, DomainDataset]:
    """One balanced, stratified-split dataset per domain of ``spec``."""
    out = {}
    for k, dom in enumerate(spec.domains):
        rng = np.random.Generator(np.random.PCG64([spec.seed, k]))
        labels = rng.permutation(np.arange(spec.size) % 2)
        examples = []
        for i, label in enumerate(labels):
            length = int(rng.integers(spec.sentence_length[0], spec.sentence_length[1] + 1))
            n_pol = int(rng.integers(spec.polarity_count[0], spec.polarity_count[1] + 1))
            shared = spec.shared_pos if label else spec.shared_neg
            specific = spec.domain_pos[dom] if label else spec.domain_neg[dom]
            words = []
            for _ in range(n_pol):
                lex = specific if rng.random() < spec.mix_ratio else shared
                words.append(lex[int(rng.integers(len(lex)))])
            noise = spec.noise[dom]
            words.extend(noise[j] for j in rng.integers(len(noise), size=length - n_pol))
            words = [words[j] for j in rng.permutation(length)]
            examples.append(Example(f"{dom}-{i:06d}", words, int(label)))
        out[dom] = DomainDataset(dom, examples, split_dataset(examples, rng))
    return out


# ---------------------------------------------------------------------------
# single source -> target run
# ---------------------------------------------------------------------------


@dataclass
class PairResult:
    source: str
    target: str
    model: str
    seed: int
    accuracy: float
    epoch_seconds: list[float] = field(default_factory=list)
    report: TrainReport | None = None
    in_domain: bool = False
    params: M.GcnParams | None = field(default=None, repr=False)
    vocab: Vocabulary | None = field(default=None, repr=False)
    baseline: B.LogRegModel | None = field(default=None, repr=False)


def _docs(examples: Sequence[Example]) -> list[list[str]]:
    return [ex.tokens for ex in examples]


def _encode(examples: Sequence[Example], vocab: Vocabulary, max_len: int) -> Split:
    return Split(encode_batch(_docs(examples), vocab, max_len), [ex.label for ex in examples])


def build_embeddings(config: ExperimentConfig, vocab: Vocabulary, rng: np.random.Generator) -> np.ndarray:
    if config.embeddings:
        return load_embeddings(config.embeddings, vocab, config.embed_dim)
    return random_embeddings(vocab, config.embed_dim, rng)


def train_source(source: DomainDataset, model: str, config: ExperimentConfig, seed: int) -> PairResult:
    """Fit ``model`` on the source train/val splits; ``accuracy`` is left at 0."""
    train_ex = source.split("train")
    if model in (B.BOW, B.TFIDF):
        lr = B.fit_baseline(model, _docs(train_ex), [ex.label for ex in train_ex], min_freq=config.min_freq)
        return PairResult(source.domain, "", model, seed, 0.0, baseline=lr)

    val_ex = source.split("val")
    vocab = build_vocab(_docs(train_ex), config.vocab_size)
    rng = make_rng(seed)
    emb = build_embeddings(config, vocab, rng)
    params = M.init_model(
        model,
        emb,
        rng,
        kernel_sizes=config.kernel_sizes,
        filters=config.filters,
        train_embeddings=config.train_embeddings,
        meta={"seed": seed, "vocab_hash": vocab.digest(), "max_len": config.max_len, "source": source.domain},
    )
    best, report = fit(
        params,
        _encode(train_ex, vocab, config.max_len),
        _encode(val_ex, vocab, config.max_len),
        config.train_config(seed),
    )
    return PairResult(source.domain, "", model, seed, 0.0, report.epoch_seconds(), report, params=best, vocab=vocab)


def score_target(trained: PairResult, target: DomainDataset, config: ExperimentConfig) -> float:
    test_ex = target.split("test")
    if not test_ex:
        raise ValueError(f"target {target.domain!r} has an empty test split")
    if trained.params is None:
        return B.baseline_accuracy(trained.baseline, _docs(test_ex), [ex.label for ex in test_ex])
    acc, _ = evaluate(trained.params, _encode(test_ex, trained.vocab, config.max_len))
    return acc


def run_pair(
    source: DomainDataset, target: DomainDataset, model: str, config: ExperimentConfig, seed: int | None = None
) -> PairResult:
    """Train on ``source`` and report accuracy on the test split of ``target``.

    Passing the same dataset as source and target is an explicit in-domain
    sanity run and is flagged as such in the result. Otherwise the document
    ids must be disjoint, and the target train/val splits must not be read.
    """
    seed = config.seed if seed is None else seed
    in_domain = source is target
    if not in_domain:
        overlap = source.ids() & target.ids()
        if overlap:
            raise ProtocolError(f"{len(overlap)} document ids shared by {source.domain!r} and {target.domain!r}")
    before = (target.reads["train"], target.reads["val"])
    res = train_source(source, model, config, seed)
    res.target = target.domain
    res.in_domain = in_domain
    res.accuracy = score_target(res, target, config)
    if not in_domain and (target.reads["train"], target.reads["val"]) != before:
        raise ProtocolError(f"target {target.domain!r} train/val splits were read during the run")
    return res


# ---------------------------------------------------------------------------
# full matrix
# ---------------------------------------------------------------------------

MATRIX_COLUMNS = ["source", "target", "model", "accuracy", "seed"]


@dataclass
class MatrixRow:
    source: str
    target: str
    model: str
    accuracy: float | None  # percent; None marks a failed cell
    seeds: list[int]
    error: str = ""


@dataclass
class CrossDomainMatrix:
    domains: list[str]
    rows: list[MatrixRow] = field(default_factory=list)
    epoch_seconds: dict[str, list[float]] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(r.accuracy is None for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MATRIX_COLUMNS)
        for r in self.rows:
            acc = "failed" if r.accuracy is None else f"{r.accuracy:.2f}"
            w.writerow([r.source, r.target, r.model, acc, ";".join(map(str, r.seeds))])
        return buf.getvalue()

    def table(self, models: Sequence[str]) -> str:
        """Source->Target rows, one accuracy column per model."""
        cells = {(r.source, r.target, r.model): r.accuracy for r in self.rows}
        head = f"{'pair':<24}" + "".join(f"{m:>10}" for m in models)
        lines = [head]
        for s in self.domains:
            for t in self.domains:
                if s == t:
                    continue
                vals = [cells.get((s, t, m)) for m in models]
                lines.append(f"{s + '->' + t:<24}" + "".join(f"{'failed' if v is None else f'{v:.2f}':>10}" for v in vals))
        return "\n".join(lines)


def run_matrix(
    datasets: Sequence[DomainDataset], models: Sequence[str], config: ExperimentConfig, seeds: Sequence[int] | None = None
) -> CrossDomainMatrix:
    """Every ordered (source, target) pair for every model, averaged over ``seeds``.

    A model is trained once per (source, seed) and scored on each target.
    Failed cells are kept with ``accuracy=None``.
    """
    if len(datasets) < 2:
        raise ValueError("a cross-domain matrix needs at least two domains")
    seeds = list(range(config.seed, config.seed + config.n_seeds)) if seeds is None else list(seeds)
    matrix = CrossDomainMatrix([d.domain for d in datasets])
    for src in datasets:
        targets = [t for t in datasets if t is not src]
        for model in models:
            accs: dict[str, list[float]] = {t.domain: [] for t in targets}
            errors: dict[str, str] = {}
            for seed in seeds:
                before = {t.domain: (t.reads["train"], t.reads["val"]) for t in targets}
                try:
                    trained = train_source(src, model, config, seed)
                except Exception as exc:  # noqa: BLE001 - one bad cell must not sink the matrix
                    log.error("training %s on %s (seed %d) failed: %s", model, src.domain, seed, exc)
                    for t in targets:
                        errors[t.domain] = str(exc)
                    continue
                if trained.epoch_seconds:
                    matrix.epoch_seconds.setdefault(model, []).extend(trained.epoch_seconds)
                for t in targets:
                    try:
                        if src.ids() & t.ids():
                            raise ProtocolError(f"document ids shared by {src.domain!r} and {t.domain!r}")
                        accs[t.domain].append(score_target(trained, t, config))
                        if (t.reads["train"], t.reads["val"]) != before[t.domain]:
                            raise ProtocolError(f"target {t.domain!r} train/val splits were read")
                    except Exception as exc:  # noqa: BLE001
                        log.error("%s %s->%s (seed %d) failed: %s", model, src.domain, t.domain, seed, exc)
                        errors[t.domain] = str(exc)
            for t in targets:
                ok = t.domain not in errors and accs[t.domain]
                acc = round(100.0 * float(np.mean(accs[t.domain])), 2) if ok else None
                matrix.rows.append(MatrixRow(src.domain, t.domain, model, acc, seeds, errors.get(t.domain, "")))
    return matrix


# ---------------------------------------------------------------------------
# gate heatmaps
# ---------------------------------------------------------------------------


def export_gate_heatmap(params: M.GcnParams, tokens: Sequence[str], vocab: Vocabulary, max_len: int, path_prefix) -> list[Path]:
    """Write one CSV per conv branch: position, n-gram, every filter's gate value, mean."""
    idx = encode_batch([list(tokens)], vocab, max_len)
    maps = M.gate_activations(params, idx, tokens)
    prefix = Path(path_prefix)
    paths = []
    for gm in maps:
        path = prefix.with_name(f"{prefix.name}_h{gm.h}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["position", "ngram"] + [f"f{k}" for k in range(gm.activations.shape[1])] + ["mean"])
            for i, (gram, row, mean) in enumerate(zip(gm.ngrams, gm.activations, gm.mean)):
                w.writerow([i, gram] + [repr(float(v)) for v in row] + [repr(float(mean))])
        paths.append(path)
    return paths


def gate_weight_by_ngram_class(
    params: M.GcnParams,
    examples: Sequence[Example],
    vocab: Vocabulary,
    max_len: int,
    polarity_words: set[str],
    noise_words: set[str],
    h: int = 3,
) -> tuple[float, float]:
    """Mean gate weight (average over filters) of h-grams that contain a word
    from ``polarity_words`` versus h-grams made only of ``noise_words``."""
    pol, noise = [], []
    for ex in examples:
        maps = {gm.h: gm for gm in M.gate_activations(params, encode_batch([ex.tokens], vocab, max_len), ex.tokens)}
        gm = maps[h]
        for gram, mean in zip(gm.ngrams, gm.mean):
            words = gram.split(" ")
            if any(w in polarity_words for w in words):
                pol.append(mean)
            elif all(w in noise_words for w in words):
                noise.append(mean)
    if not pol or not noise:
        raise ValueError("no h-grams in one of the two classes")
    return float(np.mean(pol)), float(np.mean(noise))


# ---------------------------------------------------------------------------
# timing and manifests
# ---------------------------------------------------------------------------


@dataclass
class TimingRow:
    model: str
    mean: float
    std: float
    epochs: int


def timing_report(runs: dict[str, list[float]]) -> list[TimingRow]:
    """Mean and population standard deviation of seconds per epoch, per model."""
    rows = []
    for model, secs in runs.items():
        if not secs:
            raise ValueError(f"model {model!r} has no completed epochs")
        rows.append(TimingRow(model, statistics.fmean(secs), statistics.pstdev(secs), len(secs)))
    return rows


def timing_csv(rows: Sequence[TimingRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "epoch_seconds_mean", "epoch_seconds_std", "epochs"])
    for r in rows:
        w.writerow([r.model, f"{r.mean:.6f}", f"{r.std:.6f}", r.epochs])
    return buf.getvalue()


def timing_table(rows: Sequence[TimingRow]) -> str:
    lines = [f"{'model':<8}{'s/epoch':>12}{'std':>12}{'epochs':>8}"]
    lines += [f"{r.model:<8}{r.mean:>12.4f}{r.std:>12.4f}{r.epochs:>8}" for r in rows]
    by_model = {r.model: r.mean for r in rows}
    if "none" in by_model and by_model["none"] > 0:
        for g in GATED:
            if g in by_model:
                lines.append(f"{g}/none epoch-time ratio: {by_model[g] / by_model['none']:.3f}")
    return "\n".join(lines)


def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(path, command: str, config: ExperimentConfig, inputs: Sequence, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": config.to_dict(),
        "inputs": {str(p): git_blob_hash(p) for p in inputs},
    }
    manifest.update(extra or {})
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
