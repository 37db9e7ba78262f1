"""Command-line interface: ``chmm generate | prepare-text | train | eval | decode | prune | export``.

Every subcommand accepts ``--config FILE``, a flat ``key = value`` file
whose keys are the long flag names (dashes or underscores). Flags given on
the command line override the file; unknown keys are a usage error.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from chmm.errors import ChmmError, ImpossibleSequenceError
from chmm.model import Alphabet, BlockTransitionModel, CloneLayout

log = logging.getLogger("chmm")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
_INTS = re.compile(r"^[\d\s]+$")


class UsageError(Exception):
    pass


# config files

def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    defaults = {}
    for key, raw in values.items():
        act = actions[key]
        try:
            if isinstance(act, argparse._StoreTrueAction):
                val = _parse_bool(raw)
            elif act.type is not None:
                val = act.type(raw)
            else:
                val = raw
        except (TypeError, ValueError) as exc:
            raise UsageError(f"config key {key}: {exc}") from None
        if act.choices is not None and val not in act.choices:
            raise UsageError(f"config key {key}: {val!r} not in {list(act.choices)}")
        defaults[key] = val
    sub.set_defaults(**defaults)


# data files

def _meta_path(path) -> Path:
    return Path(f"{path}.meta")


def write_meta(path, items: dict) -> None:
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")


def read_meta(path) -> dict[str, str]:
    mp = _meta_path(path)
    return read_config(mp) if mp.exists() else {}


def write_sequence(path, seq, symbols: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if symbols == "int":
            fh.write(" ".join(str(int(s)) for s in seq))
        else:
            fh.write("".join(seq))
        fh.write("\n")


def load_data(path, symbols: str = "auto") -> tuple[list[list], dict[str, str]]:
    """One sequence per line, as integer tokens or characters."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ChmmError(f"cannot read data file {path}: {exc.strerror}") from None
    meta = read_meta(path)
    kind = meta.get("symbols", symbols)
    lines = [ln for ln in text.split("\n") if ln != ""]
    if kind == "auto":
        kind = "int" if lines and all(_INTS.match(ln) for ln in lines) and any(" " in ln for ln in lines) else "char"
    if kind == "int":
        seqs = [[int(t) for t in ln.split()] for ln in lines]
    else:
        seqs = [list(ln) for ln in lines]
    seqs = [s for s in seqs if s]
    if not seqs:
        raise ChmmError(f"data file {path} holds no symbols")
    meta["symbols"] = kind
    return seqs, meta


def _alphabet_for(seq_sets, meta: dict[str, str], choice: str) -> Alphabet:
    from chmm.text import TEXT_ALPHABET

    if choice == "text":
        return TEXT_ALPHABET
    if "alphabet" in meta:
        return Alphabet(json.loads(meta["alphabet"]))
    if meta.get("symbols") == "int":
        n = int(meta["n_symbols"]) if "n_symbols" in meta else 1 + max(max(s) for ss in seq_sets for s in ss)
        return Alphabet(list(range(n)))
    return Alphabet.from_corpus(t for ss in seq_sets for s in ss for t in s)


def _encode(alphabet: Alphabet, seqs, what: str) -> list[np.ndarray]:
    try:
        return [alphabet.encode(s) for s in seqs]
    except ValueError as exc:
        raise ChmmError(f"{what}: {exc}") from None


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6f}"


# generate

def cmd_generate(args) -> int:
    from chmm import datasets as ds

    if args.kind is None:
        raise UsageError("generate needs a kind: toy, bracket or concat-ab")
    if args.out is None:
        raise UsageError("--out is required")
    try:
        if args.kind == "toy":
            mix = ds.AlphaMix(args.alpha_u, args.alpha_d, args.p_u) if args.alpha_mix else None
            params = ds.ToyFsmParams(k=args.k, alpha_mix=mix, seed=args.seed)
            seq = ds.toy_alpha_mix_generate(params, args.n) if mix else ds.toy_generate(params, args.n)
            meta = {"kind": "toy", "symbols": "int", "n_symbols": params.n_symbols, "k": args.k}
            if mix:
                meta.update(alpha_u=args.alpha_u, alpha_d=args.alpha_d, p_u=args.p_u)
            symbols = "int"
        elif args.kind == "bracket":
            params = ds.BracketParams(
                k=args.k, level0=_floats(args.level0, 2), level1=_floats(args.level1, 3),
                terminate=args.terminate, seed=args.seed,
            )
            seq = ds.bracket_generate(params, args.n)
            meta = {"kind": "bracket", "symbols": "char", "k": args.k, "level0": args.level0,
                    "level1": args.level1, "terminate": args.terminate,
                    "alphabet": json.dumps(list(ds.BRACKET_ALPHABET.symbols))}
            symbols = "char"
        else:
            seq = ds.concat_ab_generator(args.n, args.seed)
            meta = {"kind": "concat-ab", "symbols": "char", "alphabet": json.dumps(list(ds.AB_ALPHABET.symbols))}
            symbols = "char"
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    meta.update(n=args.n, seed=args.seed)
    write_sequence(args.out, seq, symbols)
    write_meta(args.out, meta)
    print(f"wrote {args.n} symbols to {args.out}")
    return EXIT_OK


def _floats(text: str, n: int) -> tuple[float, ...]:
    vals = tuple(float(x) for x in text.split(","))
    if len(vals) != n:
        raise ValueError(f"expected {n} comma-separated probabilities, got {text!r}")
    return vals


# prepare-text

def cmd_prepare_text(args) -> int:
    from chmm.text import TEXT_ALPHABET, TextPipelineConfig, preprocess_text

    if args.input is None or args.out_prefix is None:
        raise UsageError("--input and --out-prefix are required")
    try:
        cfg = TextPipelineConfig(args.train_fraction, args.max_train_symbols, args.validation_fraction, args.rare_token)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        raw = Path(args.input).read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise ChmmError(f"cannot read {args.input}: {exc.strerror}") from None
    splits = preprocess_text(raw, cfg)
    alpha = json.dumps(list(TEXT_ALPHABET.symbols))
    rows = []
    for part in ("train", "validation", "test"):
        path = f"{args.out_prefix}.{part}.txt"
        text = getattr(splits, part)
        write_sequence(path, text, "char")
        write_meta(path, {"kind": "text", "symbols": "char", "part": part, "alphabet": alpha, "source": args.input})
        rows.append((part, path, len(text)))
        print(f"{part}: {len(text)} symbols -> {path}")
    _write_csv(f"{args.out_prefix}.splits.csv", ["part", "path", "n_symbols"], rows)
    return EXIT_OK


# train

def _layout(args, alphabet: Alphabet, train_seqs) -> CloneLayout:
    from chmm.model import allocate_clones_by_frequency, allocate_clones_by_ngram

    given = [x is not None for x in (args.clone_counts, args.capacity)]
    if sum(given) > 1:
        raise UsageError("give at most one of --clone-counts and --capacity")
    if args.clone_counts is not None:
        counts = [int(x) for x in args.clone_counts.split(",")]
        if len(counts) != alphabet.size:
            raise UsageError(f"--clone-counts has {len(counts)} entries for {alphabet.size} symbols")
        return CloneLayout(counts)
    if args.capacity is not None:
        corpus = [alphabet.symbols[int(i)] for s in train_seqs for i in s]
        if args.allocation == "ngram":
            return allocate_clones_by_ngram(corpus, args.ngram_order, args.capacity, alphabet=alphabet)
        return allocate_clones_by_frequency(corpus, args.capacity, alphabet=alphabet)
    return CloneLayout.uniform(alphabet.size, args.clones)


def cmd_train(args) -> int:
    from chmm import learning as L
    from chmm.io import save_model

    if args.data is None or args.model_out is None:
        raise UsageError("--data and --model-out are required")
    if args.algo == "early-stop" and args.val_data is None:
        raise UsageError("--algo early-stop needs --val-data")
    try:
        em = L.EmConfig(max_iters=args.max_iters, rel_tol=args.rel_tol, seed=args.seed,
                        eval_smoothing=args.eval_smoothing, threads=args.threads, support=args.support)
        online = L.OnlineEmConfig(batch_size=args.batch_size, lam=args.lam, epochs=args.epochs,
                                  init_weight=args.init_weight, tol=args.online_tol)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    train_raw, meta = load_data(args.data, args.symbols)
    val_raw = load_data(args.val_data, args.symbols)[0] if args.val_data else None
    test_raw = load_data(args.test_data, args.symbols)[0] if args.test_data else None
    sets = [s for s in (train_raw, val_raw, test_raw) if s is not None]
    alphabet = _alphabet_for(sets, meta, args.alphabet)
    train = _encode(alphabet, train_raw, "training data")
    val = _encode(alphabet, val_raw, "validation data") if val_raw else None
    test = _encode(alphabet, test_raw, "test data") if test_raw else None
    report_path = args.report or f"{args.model_out}.csv"

    if args.algo == "dense-hmm":
        return _train_dense(args, em, alphabet, train, val, test, report_path)

    init = None
    if args.init is not None:
        init, init_alpha = _load_any(args.init)
        if not isinstance(init, BlockTransitionModel) or init_alpha != alphabet:
            raise ChmmError(f"--init model {args.init} does not match the data alphabet")
        layout = init.layout
    else:
        layout = _layout(args, alphabet, train)
    log.info("layout: %d states over %d symbols", layout.n_states, layout.n_symbols)
    try:
        if args.algo == "batch":
            model, rep = L.fit_batch_em(layout, train, em, init=init, alphabet=alphabet, validation=val)
        elif args.algo == "online":
            model, rep = L.fit_online_em(layout, train, online, em, init=init, alphabet=alphabet, validation=val)
        else:
            if init is not None:
                raise UsageError("--init is not supported with early-stop")
            model, rep = L.fit_with_early_stopping(
                layout, train, val, online, em, max_online_epochs=args.max_online_epochs,
                max_batch_iters=args.max_batch_iters, patience=args.patience, alphabet=alphabet,
            )
    except ImpossibleSequenceError as exc:
        idx = "" if exc.sequence_index is None else f" (sequence index {exc.sequence_index})"
        raise ChmmError(f"impossible training sequence{idx}: {exc}") from None
    save_model(model, args.model_out)
    rep.to_csv(report_path)
    summary = {"train_bps": L.test_bps(model, train, 0.0), "iterations": rep.iters_run, "stop_reason": rep.stop_reason}
    if args.algo == "early-stop":
        summary["selected"] = "%d+%d" % rep.selected
    if val is not None:
        summary["val_bps"] = L.test_bps(model, val, em.eval_smoothing)
    if test is not None:
        summary["test_bps"] = L.test_bps(model, test, em.eval_smoothing)
    return _finish_train(args, summary, layout.n_states)


def _train_dense(args, em, alphabet, train, val, test, report_path) -> int:
    from chmm.dense import fit_dense_hmm

    if args.hidden is None:
        raise UsageError("--algo dense-hmm needs --hidden")
    try:
        hmm, rep = fit_dense_hmm(args.hidden, train, em, n_symbols=alphabet.size)
    except ImpossibleSequenceError as exc:
        raise ChmmError(f"impossible training sequence: {exc}") from None
    np.savez(args.model_out, transitions=hmm.transitions, emissions=hmm.emissions, prior=hmm.prior,
             alphabet=np.array(json.dumps(list(alphabet.symbols))))
    # np.savez appends .npz when missing
    if not str(args.model_out).endswith(".npz"):
        os.replace(f"{args.model_out}.npz", args.model_out)
    rep.to_csv(report_path)
    n = sum(s.size for s in train)
    ll = sum(hmm.log_likelihood(s) for s in train)
    summary = {"train_bps": -ll / (n * math.log(2)), "iterations": rep.iters_run, "stop_reason": rep.stop_reason}
    for name, seqs in (("val_bps", val), ("test_bps", test)):
        if seqs is not None:
            m = sum(s.size for s in seqs)
            summary[name] = sum(hmm.bits_per_symbol(s, em.eval_smoothing) * s.size for s in seqs) / m
    return _finish_train(args, summary, args.hidden)


def _finish_train(args, summary: dict, n_states: int) -> int:
    summary = {"algo": args.algo, "n_states": n_states, "seed": args.seed, **summary}
    path = args.summary or f"{args.model_out}.summary.csv"
    _write_csv(path, list(summary), [[_fmt(v) if isinstance(v, float) else v for v in summary.values()]])
    print(" ".join(f"{k}={_fmt(v) if isinstance(v, float) else v}" for k, v in summary.items()))
    return EXIT_OK


# eval

def _load_any(path):
    from chmm.dense import DenseHmm
    from chmm.io import load_model

    if not Path(path).exists():
        raise ChmmError(f"model file {path} does not exist")
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"PK":
        z = np.load(path)
        hmm = DenseHmm(z["transitions"], z["emissions"], z["prior"])
        return hmm, Alphabet(json.loads(str(z["alphabet"])))
    model = load_model(path)
    return model, model.alphabet


def cmd_eval(args) -> int:
    from chmm.inference import bits_per_symbol

    if args.model is None or args.data is None:
        raise UsageError("--model and --data are required")
    model, alphabet = _load_any(args.model)
    raw, _ = load_data(args.data, args.symbols)
    seqs = _encode(alphabet, raw, "evaluation data")
    n = sum(s.size for s in seqs)
    total, impossible = 0.0, 0
    for s in seqs:
        if isinstance(model, BlockTransitionModel):
            b = bits_per_symbol(model, s, args.smoothing)
        else:
            b = model.bits_per_symbol(s, args.smoothing)
        if math.isinf(b):
            impossible += 1
        total += b * s.size
    bps = math.inf if impossible else total / n
    if args.csv:
        _write_csv(args.csv, ["model", "data", "n_symbols", "n_sequences", "n_impossible", "smoothing", "bps"],
                   [[args.model, args.data, n, len(seqs), impossible, args.smoothing, _fmt(bps)]])
    print(f"bps={_fmt(bps)} n_symbols={n} n_impossible={impossible}")
    return EXIT_OK


# decode

def cmd_decode(args) -> int:
    from chmm.analysis import ScrambledEncoding, decode_scrambled, encode_scrambled, permutation_baseline, \
        scramble_words, word_spans
    from chmm.inference import EvidenceSequence, smoothed

    if args.model is None or args.text is None:
        raise UsageError("--model and --text are required")
    model, alphabet = _load_any(args.model)
    if not isinstance(model, BlockTransitionModel):
        raise UsageError("decode needs a cloned HMM model file")
    try:
        text = Path(args.text).read_text(encoding="utf-8").strip("\n")
        reference = Path(args.reference).read_text(encoding="utf-8").strip("\n") if args.reference else None
    except OSError as exc:
        raise ChmmError(f"cannot read input: {exc.strerror}") from None
    if args.scramble_seed is not None:
        reference = reference if reference is not None else text
        text = scramble_words(text, args.scramble_seed)
    missing = sorted(set(text) - set(alphabet.symbols))
    if missing:
        raise ChmmError(f"text contains symbols outside the model alphabet: {missing}")
    if reference is not None and len(reference) != len(text):
        raise ChmmError("reference and input text differ in length")
    scrambled = args.scrambled or args.scramble_seed is not None
    if scrambled:
        enc = encode_scrambled(text, alphabet)
    else:
        enc = ScrambledEncoding(EvidenceSequence.from_symbols(alphabet.encode(text)), word_spans(text), list(text))
    res = decode_scrambled(smoothed(model, args.smoothing), enc, reference)
    decoded = res.text
    if args.out:
        Path(args.out).write_text(decoded + "\n", encoding="utf-8")
    else:
        print(decoded, flush=True)
    baseline = permutation_baseline(text) if scrambled else 1.0
    row = [len(res.word_correct), f"{res.word_accuracy:.6f}", f"{res.char_accuracy:.6f}",
           res.n_impossible_words, f"{baseline:.6f}"]
    header = ["n_words", "word_accuracy", "char_accuracy", "n_impossible_words", "baseline_word_accuracy"]
    if args.csv:
        _write_csv(args.csv, header, [row])
    print(" ".join(f"{h}={v}" for h, v in zip(header, row)), file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


# prune / export

def cmd_prune(args) -> int:
    from chmm.analysis import PruneReport, prune_transitions
    from chmm.io import save_model

    if args.model is None or args.threshold is None:
        raise UsageError("--model and --threshold are required")
    try:
        thresholds = sorted(float(t) for t in str(args.threshold).split(","))
    except ValueError:
        raise UsageError(f"bad threshold list {args.threshold!r}") from None
    if any(t < 0 for t in thresholds):
        raise UsageError("thresholds must be nonnegative")
    if args.out and len(thresholds) != 1:
        raise UsageError("--out needs exactly one threshold")
    model, alphabet = _load_any(args.model)
    if not isinstance(model, BlockTransitionModel):
        raise UsageError("prune needs a cloned HMM model file")
    ev = None
    if args.eval_data:
        raw, _ = load_data(args.eval_data, args.symbols)
        ev = _encode(alphabet, raw, "evaluation data")
        if len(ev) > 1:
            raise ChmmError("pruning evaluation expects a single sequence")
        ev = ev[0]
    report = PruneReport()
    for t in thresholds:
        pruned, row = prune_transitions(model, t, ev, args.smoothing)
        report.rows.append(row)
        bps = "" if row.bps is None else f" bps={_fmt(row.bps)}"
        print(f"threshold={t:g} fraction_zeroed={row.fraction_zeroed:.6f}{bps}")
    if args.out:
        save_model(pruned, args.out)
    if args.csv:
        report.to_csv(args.csv)
    return EXIT_OK


def cmd_export(args) -> int:
    from chmm.analysis import export_graph

    if args.model is None or args.out is None:
        raise UsageError("--model and --out are required")
    model, _ = _load_any(args.model)
    if not isinstance(model, BlockTransitionModel):
        raise UsageError("export needs a cloned HMM model file")
    try:
        n = export_graph(model, args.out, args.threshold, args.format)
    except OSError as exc:
        raise ChmmError(f"cannot write {args.out}: {exc.strerror}") from None
    print(f"wrote {n} edges to {args.out}")
    return EXIT_OK


# parser

def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # show defaults, but not for options without one
    def _get_help_string(self, action):
        if action.default is None or action.default is False:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="chmm", description="Cloned hidden Markov models.", formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    subs = parser.add_subparsers(dest="command", required=True)
    out: dict[str, argparse.ArgumentParser] = {}

    def add(name, help_text):
        p = subs.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.add_argument("--config", help="flat key = value file; flags override it")
        out[name] = p
        return p

    p = add("generate", "write a synthetic sequence plus a .meta sidecar")
    p.add_argument("kind", nargs="?", choices=["toy", "bracket", "concat-ab"], help="language")
    p.add_argument("--k", type=int, default=2, help="toy holes / bracket max depth")
    p.add_argument("--n", type=int, default=10000, help="number of symbols")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path")
    p.add_argument("--alpha-mix", action="store_true", help="toy: geometric noise extension")
    p.add_argument("--alpha-u", type=float, default=0.9)
    p.add_argument("--alpha-d", type=float, default=0.1)
    p.add_argument("--p-u", type=float, default=0.95)
    p.add_argument("--level0", default="0.5,0.5", help="bracket: depth-0 split of '(' and '['")
    p.add_argument("--level1", default=f"{1/3},{1/3},{1/3}", help="bracket: '(', '[', close below depth k")
    p.add_argument("--terminate", type=float, default=1 / 3, help="bracket: sentence end probability")
    p.set_defaults(func=cmd_generate)

    p = add("prepare-text", "normalize a raw text file into train / validation / test splits")
    p.add_argument("--input", help="raw UTF-8 text")
    p.add_argument("--out-prefix", help="writes PREFIX.{train,validation,test}.txt")
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.add_argument("--max-train-symbols", type=int, default=750_000)
    p.add_argument("--validation-fraction", type=float, default=0.1, help="tail of train held out")
    p.add_argument("--rare-token", default="rare")
    p.set_defaults(func=cmd_prepare_text)

    p = add("train", "fit a model and write it with a per-iteration CSV report")
    p.add_argument("--data", help="training data")
    p.add_argument("--val-data")
    p.add_argument("--test-data")
    p.add_argument("--symbols", choices=["auto", "int", "char"], default="auto",
                   help="token type when no .meta sidecar exists")
    p.add_argument("--alphabet", choices=["auto", "text"], default="auto",
                   help="'text' forces the 27-symbol letters-and-space alphabet")
    p.add_argument("--algo", choices=["batch", "online", "early-stop", "dense-hmm"], default="batch")
    p.add_argument("--clones", type=int, default=1, help="clones per symbol (uniform layout)")
    p.add_argument("--clone-counts", help="comma-separated clones per symbol, alphabet order")
    p.add_argument("--capacity", type=int, help="total states, allocated by --allocation")
    p.add_argument("--allocation", choices=["frequency", "ngram"], default="ngram")
    p.add_argument("--ngram-order", type=int, default=3)
    p.add_argument("--support", choices=["observed", "masked", "full"], default="observed",
                   help="transition blocks present at initialization")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--eval-smoothing", type=float, default=1e-5)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="E-step worker threads")
    p.add_argument("--lam", type=float, default=0.9, help="online forgetting factor")
    p.add_argument("--batch-size", type=int, default=400)
    p.add_argument("--epochs", type=int, default=1000, help="online epoch cap")
    p.add_argument("--online-tol", type=float, default=1e-12)
    p.add_argument("--init-weight", type=float, default=1.0)
    p.add_argument("--max-online-epochs", type=_nonneg_int, default=3)
    p.add_argument("--max-batch-iters", type=_nonneg_int, default=20)
    p.add_argument("--patience", type=int, default=2)
    p.add_argument("--hidden", type=int, help="dense-hmm: number of hidden states")
    p.add_argument("--init", help="start from this model file instead of a random one")
    p.add_argument("--model-out", help="model path")
    p.add_argument("--report", help="per-iteration CSV (default MODEL_OUT.csv)")
    p.add_argument("--summary", help="final-numbers CSV (default MODEL_OUT.summary.csv)")
    p.set_defaults(func=cmd_train)

    p = add("eval", "bits per symbol of a model on a data file")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--symbols", choices=["auto", "int", "char"], default="auto")
    p.add_argument("--smoothing", type=float, default=1e-5, help="evaluation-time epsilon")
    p.add_argument("--csv", help="write the result row here")
    p.set_defaults(func=cmd_eval)

    p = add("decode", "MAP-decode text, optionally under scrambled-word evidence")
    p.add_argument("--model")
    p.add_argument("--text", help="input text file over the model alphabet")
    p.add_argument("--scrambled", action="store_true", help="treat word interiors as scrambled")
    p.add_argument("--scramble-seed", type=int, help="scramble the input first and score against it")
    p.add_argument("--reference", help="ground-truth text for accuracy")
    p.add_argument("--smoothing", type=float, default=1e-5, help="epsilon floor applied before decoding")
    p.add_argument("--out", help="decoded text (default stdout)")
    p.add_argument("--csv", help="accuracy CSV")
    p.set_defaults(func=cmd_decode)

    p = add("prune", "zero small transitions and report fraction zeroed and BPS")
    p.add_argument("--model")
    p.add_argument("--threshold", help="one threshold or a comma-separated list")
    p.add_argument("--eval-data")
    p.add_argument("--symbols", choices=["auto", "int", "char"], default="auto")
    p.add_argument("--smoothing", type=float, default=1e-5)
    p.add_argument("--out", help="pruned model (single threshold only)")
    p.add_argument("--csv", help="PruneReport CSV")
    p.set_defaults(func=cmd_prune)

    p = add("export", "write the transition graph as an edge list or DOT file")
    p.add_argument("--model")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--format", choices=["edges", "dot"], default="edges")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    for sub in out.values():
        for act in sub._actions:
            if act.help is None and act.default is not None and act.default is not False:
                act.help = "(default: %(default)s)"
    return parser, out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            _apply_config(subs[args.command], read_config(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"chmm {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ChmmError, ValueError, OSError) as exc:
        print(f"chmm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
