"""Command-line driver: synth, train, build-lm, recognize, evaluate."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import ConfigError, PipelineConfig, from_mapping, load_config
from .hypothesis import label_map, read_transcript, recognize_branch, recognize_page, write_transcript
from .imageio import BinaryImage, GrayImage, despeckle, load_image, sauvola_binarize, save_pbm
from .langmodel import build_ngrams, load_ngrams, save_ngrams
from .metrics import evaluate
from .network import init_network, load_model, save_model, train
from .segmentation import SOURCES, normalize_segment
from .syndata import (GroundTruth, PageSpec, load_ground_truth, make_default_glyphset, make_vocabulary,
                      random_page_spec, render_page, save_ground_truth)

logger = logging.getLogger("hvocr")

MANIFEST = "manifest.tsv"
_MANIFEST_HEADER = "# hvocr manifest v1"


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# Dataset synthesis


def _trim(spec: PageSpec, budget: int) -> PageSpec:
    """Drop trailing words so the page holds at most ``budget`` words."""
    lines, left = [], budget
    for line in spec.lines:
        if left <= 0:
            break
        lines.append(line[:left])
        left -= len(lines[-1])
    return PageSpec(lines=lines, interline_gap=spec.interline_gap, interword_gap=spec.interword_gap,
                    modifier_crowding=spec.modifier_crowding, noise_density=spec.noise_density,
                    rng_seed=spec.rng_seed)


def synth_pages(cfg: PipelineConfig, n_words: int, rng: np.random.Generator, glyphs, vocab
                ) -> List[Tuple[BinaryImage, GroundTruth]]:
    pages, left = [], n_words
    while left > 0:
        spec = random_page_spec(vocab, rng, n_lines=(cfg.lines_min, cfg.lines_max),
                                words_per_line=(cfg.words_per_line_min, cfg.words_per_line_max),
                                crowding=(cfg.crowding_min, cfg.crowding_max),
                                noise_density=cfg.noise_density, interline_gap=cfg.interline_gap,
                                interword_gap=cfg.interword_gap)
        spec = _trim(spec, left)
        pages.append(render_page(spec, glyphs))
        left -= len(pages[-1][1].words)
    return pages


def cmd_synth(cfg: PipelineConfig, out: Path) -> Path:
    glyphs = make_default_glyphset(cfg.glyph_seed)
    vocab = make_vocabulary(glyphs, cfg.vocabulary_size, rng_seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    try:
        (out / "pages").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create dataset directory {out}: {exc}") from None
    rows = [_MANIFEST_HEADER, f"seed\t{cfg.seed}", f"glyph_seed\t{cfg.glyph_seed}",
            f"n_labels\t{glyphs.n_labels}", "split\tpage\twords\timage\ttruth"]
    totals = {}
    for split, n_words in (("train", cfg.train_words), ("test", cfg.test_words)):
        pages = synth_pages(cfg, n_words, rng, glyphs, vocab)
        for i, (img, gt) in enumerate(pages):
            stem = f"{split}_{i:05d}"
            save_pbm(img, out / "pages" / f"{stem}.pbm")
            save_ground_truth(gt, out / "pages" / f"{stem}.gt")
            rows.append(f"{split}\t{stem}\t{len(gt.words)}\tpages/{stem}.pbm\tpages/{stem}.gt")
        totals[split] = sum(len(gt.words) for _, gt in pages)
    (out / MANIFEST).write_text("\n".join(rows) + "\n", encoding="utf-8")
    (out / "vocabulary.txt").write_text("".join(" ".join(map(str, w)) + "\n" for w in vocab),
                                        encoding="utf-8")
    logger.info("wrote %d train / %d test words to %s", totals["train"], totals["test"], out)
    return out / MANIFEST


def read_manifest(dataset: Path):
    """``(meta, records)`` where each record is ``(split, stem, words, image, truth)``."""
    path = dataset / MANIFEST
    if not path.is_file():
        raise CliError(f"{path}: dataset manifest not found")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _MANIFEST_HEADER:
        raise CliError(f"{path}: not a dataset manifest")
    meta, records = {}, []
    for row in lines[1:]:
        parts = row.split("\t")
        if len(parts) == 2:
            meta[parts[0]] = int(parts[1])
        elif len(parts) == 5 and parts[0] != "split":
            records.append((parts[0], parts[1], int(parts[2]), dataset / parts[3], dataset / parts[4]))
    return meta, records


# ---------------------------------------------------------------------------
# Training and LM


def word_crops(page: BinaryImage, truth: GroundTruth, cfg: PipelineConfig):
    """Ground-truth word crops of a (despeckled) page as training pairs."""
    clean = despeckle(page, cfg.despeckle)
    out = []
    for w in truth.words:
        x0, y0, x1, y1 = w.box
        crop = clean.crop(x0, y0, x1, y1)
        if crop.ink == 0:
            continue
        out.append((normalize_segment(crop, cfg.target_height), list(w.labels)))
    return out


def _load_pair(image: Path, truth: Path):
    img = load_image(image)
    if not isinstance(img, BinaryImage):
        raise CliError(f"{image}: expected a binary PBM page")
    return img, load_ground_truth(truth)


def cmd_train(cfg: PipelineConfig, dataset: Path, model_out: Path):
    meta, records = read_manifest(dataset)
    pages = [_load_pair(r[3], r[4]) for r in records if r[0] == "train"]
    if not pages:
        raise CliError(f"{dataset}: no training pages")
    n_val = int(round(len(pages) * cfg.validation_fraction))
    order = np.random.default_rng(cfg.seed).permutation(len(pages))
    val_idx = set(order[:n_val].tolist())
    train_set, val_set = [], []
    for i, (img, gt) in enumerate(pages):
        (val_set if i in val_idx else train_set).extend(word_crops(img, gt, cfg))
    net = init_network(cfg.hidden_sizes, cfg.target_height, meta["n_labels"], seed=cfg.seed,
                       init_range=cfg.init_range, gate_bias=tuple(cfg.gate_bias), peepholes=cfg.peepholes)
    best, log = train(net, train_set, cfg.train_config(), validation=val_set or None)
    save_model(best, model_out)
    rows = ["epoch\ttrain_ctc\tval_ctc\tval_label_error\tbest_val_ctc"]
    for r in log:
        rows.append(f"{r['epoch']}\t{r['train_ctc']:.6f}\t{r['val_ctc']:.6f}\t"
                    f"{r['val_label_error']:.4f}\t{r['best_val_ctc']:.6f}")
    Path(str(model_out) + ".log.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return best, log


def cmd_build_lm(dataset: Path, out: Path):
    meta, records = read_manifest(dataset)
    corpus = []
    for split, _, _, _, truth in records:
        if split == "train":
            corpus.extend(w.labels for w in load_ground_truth(truth).words)
    if not corpus:
        raise CliError(f"{dataset}: no training transcripts")
    model = build_ngrams(corpus, n_labels=meta.get("n_labels"))
    save_ngrams(model, out)
    return model


# ---------------------------------------------------------------------------
# Recognition and evaluation


def _page_inputs(paths: Sequence[Path]) -> List[Path]:
    out = []
    for p in paths:
        if p.is_dir():
            out.extend(sorted(p.glob("*.pbm")) + sorted(p.glob("*.pgm")))
        else:
            out.append(p)
    return out


def cmd_recognize(cfg: PipelineConfig, model: Path, lm: Path, pages: Sequence[Path], out: Path,
                  branch: str = "fused") -> List[Path]:
    for path, what in ((model, "model"), (lm, "language model")):
        if not Path(path).is_file():
            raise CliError(f"{path}: {what} file not found")
    net = load_model(model)
    ngrams = load_ngrams(lm)
    rcfg = cfg.recognizer_config()
    mapping = label_map(cfg.alphabet)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in _page_inputs(pages):
        img = load_image(path)
        if isinstance(img, GrayImage):
            img = sauvola_binarize(img)
        if branch == "fused":
            transcript = recognize_page(img, net, ngrams, rcfg)
        else:
            transcript = recognize_branch(img, net, ngrams, branch, rcfg)
        target = out / (path.stem + ".txt")
        write_transcript(transcript, target, mapping)
        written.append(target)
    return written


def cmd_evaluate(cfg: PipelineConfig, transcripts: Path, truths: Path, report: Optional[Path] = None):
    mapping = label_map(cfg.alphabet)
    truth_files = sorted(truths.glob("*.gt"))
    if not truth_files and (truths / MANIFEST).is_file():
        truth_files = [r[4] for r in read_manifest(truths)[1] if r[0] == "test"]
    hyps = []
    missing = []
    for t in truth_files:
        stem = t.name[:-3] if t.name.endswith(".gt") else t.stem
        path = transcripts / f"{stem}.txt"
        if not path.is_file():
            missing.append(path.name)
            continue
        hyps.append(read_transcript(path, mapping))
    n_txt = len(list(transcripts.glob("*.txt")))
    if missing or n_txt != len(truth_files):
        raise CliError(f"page count mismatch: {n_txt} transcripts vs {len(truth_files)} truths"
                       + (f" (missing {missing[0]})" if missing else ""))
    result = evaluate(hyps, [load_ground_truth(t) for t in truth_files])
    if report is not None:
        report.write_text(result.to_text(), encoding="utf-8")
    return result


# ---------------------------------------------------------------------------
# Argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hvocr", description="Hypothesize-and-verify word recognition.")
    p.add_argument("-c", "--config", type=Path, help="pipeline configuration file")
    p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration field (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic train/test dataset")
    s.add_argument("out", type=Path)

    s = sub.add_parser("train", help="train the recognizer on ground-truth word crops")
    s.add_argument("dataset", type=Path)
    s.add_argument("model", type=Path)

    s = sub.add_parser("build-lm", help="build the n-gram model from training transcripts")
    s.add_argument("dataset", type=Path)
    s.add_argument("out", type=Path)

    s = sub.add_parser("recognize", help="transcribe page images")
    s.add_argument("model", type=Path)
    s.add_argument("lm", type=Path)
    s.add_argument("pages", type=Path, nargs="+", help="page files or directories")
    s.add_argument("-o", "--out", type=Path, required=True, help="transcript directory")
    s.add_argument("--branch", choices=SOURCES + ("fused",), default="fused")

    s = sub.add_parser("evaluate", help="score transcripts against ground truth")
    s.add_argument("transcripts", type=Path)
    s.add_argument("truths", type=Path, help="directory of .gt files or a dataset directory")
    s.add_argument("-r", "--report", type=Path, help="write the structured report here")
    return p


def _test_pages(dataset: Path) -> List[Path]:
    return [r[3] for r in read_manifest(dataset)[1] if r[0] == "test"]


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
        overrides = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"{item}: expected KEY=VALUE")
            overrides[key.strip()] = value
        cfg = from_mapping(overrides, cfg)

        if args.command == "synth":
            print(cmd_synth(cfg, args.out))
        elif args.command == "train":
            _, log = cmd_train(cfg, args.dataset, args.model)
            last = log[-1]
            print(f"epochs {len(log)} best_val_ctc {last['best_val_ctc']:.4f}")
        elif args.command == "build-lm":
            model = cmd_build_lm(args.dataset, args.out)
            print(f"{len(model)} n-grams")
        elif args.command == "recognize":
            pages = []
            for p in args.pages:
                pages.extend(_test_pages(p) if (p / MANIFEST).is_file() else [p])
            written = cmd_recognize(cfg, args.model, args.lm, pages, args.out, args.branch)
            print(f"{len(written)} transcripts in {args.out}")
        elif args.command == "evaluate":
            report = args.report or args.transcripts / "evaluation.report"
            result = cmd_evaluate(cfg, args.transcripts, args.truths, report)
            sys.stdout.write(result.table(args.transcripts.name or "result"))
    except (CliError, ConfigError, ValueError, OSError) as exc:
        print(f"hvocr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
