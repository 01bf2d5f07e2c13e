"""``weakspk`` command line: synth, ingest, diarize, train-weak, select,
train-strong, eval, report, and ``run`` for the whole chain.

Every artifact embeds the config hash and seed, every write goes through
:func:`weakspk.io.write_bytes_if_changed`, and no artifact records wall-clock
time, so re-running a command with unchanged inputs leaves identical bytes.

Exit codes: 0 success, 1 usage or configuration error, 2 missing upstream
artifact, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as wio
from .config import PipelineConfig
from .corpus import (
    WeaklyLabeledRecording,
    emit_trials,
    synthesize_corpus,
    synthesize_eval_utterances,
)
from .diarization import Clustering, diarize, purity_coverage
from .errors import ConfigError, MissingArtifactError, NumericalError, UnsupportedFormatError
from .features import fbank, mfcc, read_wav
from .metrics import eer, min_dcf, score_trials
from .mil.network import EmbeddingNet, export_model, import_model
from .mil.training import WeakDataset, train_stage1
from .parallel import ordered_map, pin_blas, set_threads
from .selection import SelfLabeledSet, build_self_labeled, selection_metrics
from .supervised import train_stage2

log = logging.getLogger("weakspk")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_NUMERICAL = 0, 1, 2, 3
_UNTRAINED_STREAM = 30


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; we reserve 2 for missing artifacts."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- workspace layout ---------------------------------------------------------

class Workspace:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.corpus = Path(cfg.paths.corpus_dir)
        self.work = Path(cfg.paths.work_dir)
        self.stamp = {"config_hash": cfg.hash(), "seed": cfg.seed}

    # corpus
    @property
    def manifest(self):
        return self.corpus / "manifest.tsv"

    @property
    def eval_manifest(self):
        return self.corpus / "eval" / "manifest.tsv"

    @property
    def trials(self):
        return self.corpus / "trials.tsv"

    def rec_dir(self, rel):
        return self.corpus / rel

    # pipeline stages
    @property
    def diar_dir(self):
        return self.work / "diarization"

    def stage1_dir(self, kind):
        return self.work / f"stage1_{kind}"

    @property
    def select_dir(self):
        return self.work / "selection"

    def stage2_dir(self, k):
        return self.work / f"stage2_k{k}"

    def eval_dir(self, name):
        return self.work / "eval" / name

    def require(self, path, command):
        if not Path(path).exists():
            raise MissingArtifactError(path, command)
        return path


# -- corpus loading -----------------------------------------------------------

def _read_manifest(ws: Workspace):
    ws.require(ws.manifest, "synth")
    rows = []
    for line in ws.manifest.read_text().splitlines():
        if line.strip():
            rid, label, split, rel = line.split("\t")
            rows.append((int(rid), int(label), split, rel))
    return rows


def _load_recordings(ws: Workspace, split=None, diarization_view=False):
    """Feature matrices (and ground truth when present) keyed by recording id.

    ``diarization_view`` prefers the MFCC matrix written by ``ingest``.
    """
    feats, truth, labels = {}, {}, {}
    for rid, label, sp, rel in _read_manifest(ws):
        if split is not None and sp not in split:
            continue
        d = ws.rec_dir(rel)
        path = d / "mfcc.fm" if diarization_view and (d / "mfcc.fm").exists() else d / "features.fm"
        feats[rid] = wio.read_features(ws.require(path, "synth"))
        labels[rid] = label
        if (d / "truth.txt").exists():
            truth[rid] = wio.read_truth(d / "truth.txt")
    return feats, truth, labels


def _load_eval(ws: Workspace):
    ws.require(ws.eval_manifest, "synth")
    ws.require(ws.trials, "synth")
    feats = {}
    for line in ws.eval_manifest.read_text().splitlines():
        if line.strip():
            uid, _spk, rel = line.split("\t")
            feats[int(uid)] = wio.read_features(ws.rec_dir(rel) / "features.fm")
    trials = []
    for line in ws.trials.read_text().splitlines():
        if line.strip():
            e, t, tgt = line.split("\t")
            trials.append((int(e), int(t), tgt == "1"))
    return feats, trials


def _write_recording(ws, rel, features, truth=None, mfcc_features=None):
    d = ws.rec_dir(rel)
    wio.write_features(d / "features.fm", features)
    if truth is not None:
        wio.write_text(d / "truth.txt", wio.encode_truth(truth))
    if mfcc_features is not None:
        wio.write_features(d / "mfcc.fm", mfcc_features)


def _write_eval_side(ws, utterances, seed):
    lines = []
    for u in utterances:
        rel = f"eval/utt_{u.recording_id:05d}"
        _write_recording(ws, rel, u.features)
        lines.append(f"{u.recording_id}\t{u.weak_label}\t{rel}")
    wio.write_text(ws.eval_manifest, "\n".join(lines) + "\n")
    trials = emit_trials(utterances, ws.cfg.eval.trials_per_speaker, seed)
    wio.write_text(ws.trials, "".join(f"{e}\t{t}\t{int(tg)}\n" for e, t, tg in trials))
    return len(trials)


# -- commands -----------------------------------------------------------------

def cmd_synth(ws: Workspace):
    cfg = ws.cfg
    recordings, sources = synthesize_corpus(cfg.corpus, cfg.seed)
    lines = []
    target_frac = []
    for rec in recordings:
        rel = f"rec_{rec.recording_id:05d}"
        # stored as float32; everything downstream reads the stored values
        _write_recording(ws, rel, rec.features, rec.ground_truth)
        lines.append(f"{rec.recording_id}\t{rec.weak_label}\t{rec.split}\t{rel}")
        target_frac.append(float(np.mean(rec.ground_truth == rec.weak_label)))
    wio.write_text(ws.manifest, "\n".join(lines) + "\n")
    utts = synthesize_eval_utterances(cfg.corpus, cfg.seed, sources)
    n_trials = _write_eval_side(ws, utts, cfg.seed)
    summary = dict(ws.stamp, recordings=len(recordings), eval_utterances=len(utts), trials=n_trials,
                   mean_target_fraction=float(np.mean(target_frac)), source="synthetic")
    wio.write_json(ws.corpus / "corpus.json", summary)
    log.info("synth: %d recordings, %d eval utterances, %d trials", len(recordings), len(utts), n_trials)
    return summary


def cmd_ingest(ws: Workspace, wav_dir, manifest):
    """Manifest lines: ``<wav file>\\t<label>[\\t<split>]`` with split train, heldout or eval."""
    wav_dir = Path(wav_dir)
    rows = []
    for n, line in enumerate(Path(manifest).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ConfigError(f"{manifest}:{n}: expected 2 or 3 tab-separated fields")
        split = parts[2] if len(parts) == 3 else "train"
        if split not in ("train", "heldout", "eval"):
            raise ConfigError(f"{manifest}:{n}: unknown split {split!r}")
        rows.append((parts[0], int(parts[1]), split))
    lines, eval_utts = [], []
    for rid, (name, label, split) in enumerate(rows):
        wave = read_wav(wav_dir / name)
        feats = fbank(wave).frames
        if split == "eval":
            eval_utts.append(WeaklyLabeledRecording(rid, feats, label, split="eval"))
            continue
        rel = f"rec_{rid:05d}"
        _write_recording(ws, rel, feats, mfcc_features=mfcc(wave).frames)
        lines.append(f"{rid}\t{label}\t{split}\t{rel}")
    wio.write_text(ws.manifest, "\n".join(lines) + "\n")
    n_trials = 0
    if eval_utts:
        n_trials = _write_eval_side(ws, eval_utts, ws.cfg.seed)
    summary = dict(ws.stamp, recordings=len(lines), eval_utterances=len(eval_utts), trials=n_trials, source=str(wav_dir))
    wio.write_json(ws.corpus / "corpus.json", summary)
    return summary


def _diarization_key(ws: Workspace):
    return wio.config_hash({"diarization": ws.cfg.to_dict()["diarization"], "corpus": wio.read_json(ws.corpus / "corpus.json")})


def cmd_diarize(ws: Workspace):
    feats, truth, _ = _load_recordings(ws, diarization_view=True)
    ws.require(ws.corpus / "corpus.json", "synth")
    key = _diarization_key(ws)
    cache = ws.diar_dir / "clusterings.json"
    if cache.exists() and wio.read_json(cache).get("input_key") == key:
        log.info("diarize: cached clusterings are current")
        return wio.read_json(ws.diar_dir / "summary.json")
    ids = sorted(feats)
    results = ordered_map(lambda rid: diarize(feats[rid], ws.cfg.diarization, rid), ids)
    clusterings = {str(rid): res.refined.to_json() for rid, res in zip(ids, results)}
    wio.write_json(cache, dict(ws.stamp, input_key=key, clusterings=clusterings))
    rttm = [line for rid, res in zip(ids, results) for line in wio.rttm_lines(rid, res.refined)]
    wio.write_text(ws.diar_dir / "diarization.rttm", "\n".join(rttm) + "\n")
    summary = dict(ws.stamp, recordings=len(ids),
                   mean_clusters=float(np.mean([r.refined.num_clusters for r in results])))
    if truth:
        pc = [purity_coverage(res.refined, truth[rid]) for rid, res in zip(ids, results) if rid in truth]
        summary["purity"] = float(np.mean([p for p, _ in pc]))
        summary["coverage"] = float(np.mean([c for _, c in pc]))
    wio.write_json(ws.diar_dir / "summary.json", summary)
    log.info("diarize: %d recordings", len(ids))
    return summary


def _load_clusterings(ws: Workspace):
    path = ws.require(ws.diar_dir / "clusterings.json", "diarize")
    data = wio.read_json(path)["clusterings"]
    return {int(rid): Clustering.from_json(c) for rid, c in data.items()}


def _class_list(labels):
    return sorted(set(labels.values()))


def _jsonl(entries, stamp):
    return "".join(json.dumps(dict(stamp, **e), sort_keys=True) + "\n" for e in entries)


def _train_guarded(ws: Workspace, out_dir, fn):
    """Runs a training closure; on numerical failure writes the snapshot and re-raises."""
    try:
        return fn()
    except NumericalError as exc:
        wio.write_json(Path(out_dir) / "numerical_failure.json", dict(ws.stamp, error=str(exc), snapshot=exc.snapshot))
        raise


def cmd_train_weak(ws: Workspace, kinds=None):
    feats, _, labels = _load_recordings(ws, split=("train", "heldout"))
    clusterings = _load_clusterings(ws)
    classes = _class_list({r: l for r, l in labels.items()})
    class_of = {j: k for k, j in enumerate(classes)}
    split = {rid: sp for rid, _, sp, _ in _read_manifest(ws)}
    mapped = {r: class_of[l] for r, l in labels.items()}
    data = WeakDataset(feats, clusterings, mapped)
    train = data.subset([r for r in sorted(feats) if split[r] == "train"])
    heldout = data.subset([r for r in sorted(feats) if split[r] == "heldout"])
    out = {}
    for kind in kinds or ws.cfg.stage1.aggregations:
        scfg = ws.cfg.stage1_config(kind)
        d = ws.stage1_dir(kind)
        net, head, history = _train_guarded(
            ws, d, lambda: train_stage1(train, len(classes), scfg, ws.cfg.seed, heldout if len(heldout) else None)
        )
        params, meta = export_model(net, head)
        meta.update(ws.stamp, stage=1, aggregation=kind, classes=classes)
        wio.write_checkpoint(d / "model.ckpt", params, meta)
        wio.write_text(d / "log.jsonl", _jsonl(history, ws.stamp))
        out[kind] = history[-1].get("heldout_accuracy")
        log.info("train-weak %s: final held-out accuracy %s", kind, out[kind])
    return out


def _load_model(path):
    params, meta = wio.read_checkpoint(path)
    net, head = import_model(params, meta)
    return net, head, meta


def cmd_select(ws: Workspace):
    kind = ws.cfg.selection.source
    net, head, meta = _load_model(ws.require(ws.stage1_dir(kind) / "model.ckpt", "train-weak"))
    classes = meta["classes"]
    feats, truth, labels = _load_recordings(ws, split=("train",))
    clusterings = _load_clusterings(ws)
    chunkings = {rid: clusterings[rid].chunks() for rid in feats}
    class_labels = {rid: classes.index(l) for rid, l in labels.items()}
    sl = build_self_labeled(net, head, feats, chunkings, class_labels, ws.cfg.selection.select)
    # report celebrities by their original labels
    sl = SelfLabeledSet({classes[j]: v for j, v in sl.chunks.items()}, sl.frame_shift)
    wio.write_text(ws.select_dir / "manifest.tsv", "".join(l + "\n" for l in sl.manifest_lines()))
    summary = dict(ws.stamp, source=kind, **sl.summary())
    if truth and len(truth) == len(feats):
        summary.update({f"selection_{k}": v for k, v in selection_metrics(sl, truth, labels).items()})
    wio.write_json(ws.select_dir / "summary.json", summary)
    log.info("select: %s", {k: summary[k] for k in ("speakers", "chunks", "hours")})
    return summary


def cmd_train_strong(ws: Workspace, sub_centers=None):
    path = ws.require(ws.select_dir / "manifest.tsv", "select")
    sl = SelfLabeledSet.from_manifest(path.read_text().splitlines(), ws.cfg.selection.select.frame_shift)
    feats, _, _ = _load_recordings(ws, split=("train",))
    out = {}
    for k in sub_centers or ws.cfg.stage2.sub_centers:
        scfg = ws.cfg.stage2_config(k)
        d = ws.stage2_dir(k)
        net, head, history, classes = _train_guarded(ws, d, lambda: train_stage2(sl, feats, scfg, ws.cfg.seed))
        params, meta = export_model(net, head)
        meta.update(ws.stamp, stage=2, sub_centers=k, classes=classes)
        wio.write_checkpoint(d / "model.ckpt", params, meta)
        wio.write_text(d / "log.jsonl", _jsonl(history, ws.stamp))
        out[k] = history[-1]["train_loss"]
    return out


def _model_dirs(ws: Workspace):
    found = []
    for kind in ws.cfg.stage1.aggregations:
        found.append((f"stage1_{kind}", ws.stage1_dir(kind) / "model.ckpt"))
    for k in ws.cfg.stage2.sub_centers:
        found.append((f"stage2_k{k}", ws.stage2_dir(k) / "model.ckpt"))
    return found


def _untrained_net(ws: Workspace, input_dim):
    s1 = ws.cfg.stage1.train
    rng = np.random.default_rng([ws.cfg.seed, _UNTRAINED_STREAM])
    return EmbeddingNet.init(input_dim, s1.hidden, s1.embedding_dim, rng)


def _upstream_metrics(ws: Workspace, stage):
    """Diarization quality for trained models; selection quality for stage-2 models."""
    extra = {}
    diar = ws.diar_dir / "summary.json"
    if stage >= 1 and diar.exists():
        d = wio.read_json(diar)
        extra.update({k: d[k] for k in ("purity", "coverage") if k in d})
    sel = ws.select_dir / "summary.json"
    if stage == 2 and sel.exists():
        s = wio.read_json(sel)
        extra.update({k: s[k] for k in ("selection_precision", "selection_recall") if k in s})
    return extra


def _evaluate(ws: Workspace, name, net, model_meta):
    feats, trials = _load_eval(ws)
    scores = score_trials(net, trials, feats, ws.cfg.eval.max_frames)
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["enroll", "test", "score", "is_target"])
    for (e, t, tg), s in zip(trials, scores.scores):
        writer.writerow([e, t, repr(float(s)), int(tg)])
    d = ws.eval_dir(name)
    wio.write_text(d / "scores.csv", buf.getvalue())
    metrics = dict(ws.stamp, model=name, eer=eer(scores), min_dcf=min_dcf(scores), trials=len(trials), **model_meta)
    metrics.update(_upstream_metrics(ws, model_meta.get("stage", 0)))
    wio.write_json(d / "metrics.json", metrics)
    log.info("eval %s: EER %.4f minDCF %.4f", name, metrics["eer"], metrics["min_dcf"])
    return metrics


def cmd_eval(ws: Workspace, checkpoint=None, untrained=False, name=None):
    """Scores one checkpoint, the untrained baseline, or (by default) everything available."""
    if checkpoint is not None:
        net, _, meta = _load_model(ws.require(checkpoint, "train-weak"))
        info = {k: meta[k] for k in ("stage", "aggregation", "sub_centers") if k in meta}
        return [_evaluate(ws, name or Path(checkpoint).parent.name, net, info)]
    feats, _ = _load_eval(ws)
    input_dim = next(iter(feats.values())).shape[1]
    results = [_evaluate(ws, "untrained", _untrained_net(ws, input_dim), {"stage": 0})]
    if untrained:
        return results
    missing = []
    for model_name, path in _model_dirs(ws):
        if not path.exists():
            missing.append(path)
            continue
        net, _, meta = _load_model(path)
        info = {k: meta[k] for k in ("stage", "aggregation", "sub_centers") if k in meta}
        results.append(_evaluate(ws, model_name, net, info))
    if len(results) == 1 and missing:
        raise MissingArtifactError(missing[0], "train-weak")
    return results


REPORT_COLUMNS = ("model", "stage", "aggregation", "sub_centers", "eer", "min_dcf",
                  "purity", "coverage", "selection_precision", "selection_recall")


def cmd_report(ws: Workspace):
    rows = []
    names = ["untrained"] + [n for n, _ in _model_dirs(ws)]
    for name in names:
        path = ws.eval_dir(name) / "metrics.json"
        if path.exists():
            m = wio.read_json(path)
            rows.append({c: m.get(c) for c in REPORT_COLUMNS})
    if not rows:
        raise MissingArtifactError(ws.work / "eval", "eval")
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in rows:
        writer.writerow(["" if r[c] is None else r[c] for c in REPORT_COLUMNS])
    wio.write_text(ws.work / "report.csv", buf.getvalue())
    report = dict(ws.stamp, rows=rows)
    wio.write_json(ws.work / "report.json", report)
    return report


def cmd_run(ws: Workspace):
    cmd_synth(ws)
    cmd_diarize(ws)
    cmd_train_weak(ws)
    cmd_select(ws)
    cmd_train_strong(ws)
    cmd_eval(ws)
    return cmd_report(ws)


# -- argument parsing ---------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline YAML config (defaults built in)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="weakspk", description="Weakly supervised speaker-embedding pipeline.", parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate the synthetic corpus")
    ing = sub.add_parser("ingest", parents=[common], help="compute features for WAV recordings")
    ing.add_argument("wav_dir")
    ing.add_argument("manifest")
    sub.add_parser("diarize", parents=[common], help="diarize every recording")
    tw = sub.add_parser("train-weak", parents=[common], help="stage-1 weakly supervised training")
    tw.add_argument("--aggregation", choices=("lse", "max"), action="append")
    sub.add_parser("select", parents=[common], help="self-label chunks with the stage-1 model")
    ts = sub.add_parser("train-strong", parents=[common], help="stage-2 supervised training")
    ts.add_argument("--sub-centers", type=int, action="append")
    ev = sub.add_parser("eval", parents=[common], help="score verification trials")
    grp = ev.add_mutually_exclusive_group()
    grp.add_argument("--checkpoint")
    grp.add_argument("--untrained", action="store_true")
    ev.add_argument("--name", help="output name under work/eval (default: checkpoint directory)")
    sub.add_parser("report", parents=[common], help="consolidated comparison table")
    sub.add_parser("run", parents=[common], help="the whole chain, synth to report")
    return p


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg.threads = args.threads
    return cfg


def dispatch(args, ws: Workspace):
    c = args.command
    if c == "synth":
        return cmd_synth(ws)
    if c == "ingest":
        return cmd_ingest(ws, args.wav_dir, args.manifest)
    if c == "diarize":
        return cmd_diarize(ws)
    if c == "train-weak":
        return cmd_train_weak(ws, args.aggregation)
    if c == "select":
        return cmd_select(ws)
    if c == "train-strong":
        return cmd_train_strong(ws, args.sub_centers)
    if c == "eval":
        return cmd_eval(ws, args.checkpoint, args.untrained, args.name)
    if c == "report":
        return cmd_report(ws)
    if c == "run":
        return cmd_run(ws)
    raise UsageError(f"unknown command {c}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args)
        set_threads(cfg.threads)
        ws = Workspace(cfg)
        with pin_blas():
            dispatch(args, ws)
    except (ConfigError, UsageError, UnsupportedFormatError, FileNotFoundError) as exc:
        print(f"weakspk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifactError as exc:
        print(f"weakspk: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as exc:
        print(f"weakspk: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
