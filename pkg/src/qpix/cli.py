"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage error. ``QPIX_SEED`` is
used when ``--seed`` is not given.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, circuit, classify, datasets, imgenc, optimizer
from . import mps as mpslib

SCHEME_ALIASES = {"omulti": "dmulti", "oplus": "dmulti", "otimes": "tmulti"}
REPORT_TIMING_KEYS = ("wallTimeSeconds",)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("QPIX_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"QPIX_SEED must be an integer, got {env!r}") from None


def _scheme(name: str) -> str:
    name = SCHEME_ALIASES.get(name, name)
    if name not in imgenc.SCHEMES:
        raise UsageError(f"unknown encoding scheme {name!r}")
    return name


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, rows, header=None) -> None:
    header = header or (list(rows[0].keys()) if rows else [])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    path.write_text(buf.getvalue(), encoding="utf-8")


def _digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def _load_config_defaults(parser, argv):
    """Apply ``--config file.json`` values as defaults; explicit flags win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        data = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    for sub in parser._subparsers._group_actions[0].choices.values():
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in data.items()})


def load_dataset(spec: str, limit=None, seed: int = 0, side=None, labels_path=None):
    """Resolve a dataset specifier into ``(ids, images, labels)``.

    Specifiers: ``idx:PATH`` (IDX image file, optional IDX labels),
    ``pnm:PATH`` (one PGM/PPM file or a directory of them), ``digits``
    (rendered digits; ``digits:0,1`` restricts the classes) and ``natural``
    (scikit-image sample photos).
    """
    kind, _, rest = spec.partition(":")
    labels = None
    if kind == "idx":
        try:
            imgs, _ = imgenc.load_idx(Path(rest).read_bytes())
        except OSError as exc:
            raise UsageError(f"cannot read {rest}: {exc}") from None
        if imgs is None:
            raise UsageError(f"{rest} holds labels, not images")
        if limit is not None:
            imgs = imgs[:limit]
        images = list(imgs)
        if labels_path:
            _, labels = imgenc.load_idx(Path(labels_path).read_bytes())
            labels = None if labels is None else labels[:len(images)]
        ids = [f"{k:06d}" for k in range(len(images))]
    elif kind == "pnm":
        path = Path(rest)
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".pgm", ".ppm", ".pnm")) \
            if path.is_dir() else [path]
        if limit is not None:
            files = files[:limit]
        try:
            images = [imgenc.load_pnm(f.read_bytes()) for f in files]
        except OSError as exc:
            raise UsageError(str(exc)) from None
        ids = [f.stem for f in files]
    elif kind == "digits":
        digits = [int(c) for c in rest.split(",")] if rest else list(range(10))
        n = 100 if limit is None else limit
        images, labels = datasets.synthetic_digits(n, seed=seed, digits=digits, side=None)
        images = list(images)
        ids = [f"{k:06d}" for k in range(n)]
    elif kind == "natural":
        names = list(datasets.NATURAL_IMAGES)[:limit]
        images = datasets.natural_images(names)
        ids = names
    else:
        raise UsageError(f"unknown dataset specifier {spec!r}")
    if side:
        images = [imgenc.prepare_image(im, side) for im in images]
    if labels is not None:
        labels = np.asarray(labels)
    return ids, images, labels


def _grayscale(img, scheme):
    if scheme == "frqi" and img.ndim == 3:
        return img.mean(axis=2)
    return img


# ---------------------------------------------------------------------------
# compress


def _compress_item(job):
    """Worker: compress one image and write its circuit and report."""
    item_id, img, cfg, out = job
    spec = imgenc.EncodingSpec(cfg["scheme"], cfg["ordering"], cfg["patches"])
    target = mpslib.mps_from_image(_grayscale(img, cfg["scheme"]), spec)
    sc = optimizer.SweepConfig(sweeps_per_growth=cfg["sweeps"], max_layers=cfg["layers"])
    _, dc, rep = optimizer.compile_state(target, cfg["gateset"], cfg["layers"], sc,
                                         refine=cfg["bfgs"])
    out = Path(out)
    (out / f"{item_id}.qcirc").write_text(circuit.export_circuit(dc), encoding="utf-8")
    report = rep.to_json(cfg["dataset"], item_id, cfg["gateset"], cfg["layers"])
    _write_json(out / f"{item_id}.json", report)
    return item_id


def cmd_compress(args) -> int:
    if args.gateset not in circuit.GATE_SETS:
        raise UsageError(f"unknown gate set {args.gateset!r}")
    if args.layers < 1:
        raise UsageError("--layers must be at least 1")
    if args.limit is not None and args.limit < 0:
        raise UsageError("--limit must be non-negative")
    seed = _seed(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = {"dataset": args.dataset, "gateset": args.gateset, "layers": args.layers,
           "scheme": _scheme(args.scheme), "ordering": args.ordering, "patches": args.patches,
           "side": args.side, "sweeps": args.sweeps, "bfgs": not args.no_bfgs, "seed": seed}
    manifest_path = out / "manifest.json"
    digest = _digest(cfg)
    status = {}
    if manifest_path.exists():
        old = json.loads(manifest_path.read_text(encoding="utf-8"))
        if old.get("configDigest") == digest:
            status = old.get("items", {})
    if args.limit == 0:
        ids, images = [], []
    else:
        ids, images, _ = load_dataset(args.dataset, args.limit, seed, args.side)
    for i in ids:
        done = status.get(i, {}).get("status") == "done" and (out / f"{i}.qcirc").exists() \
            and (out / f"{i}.json").exists()
        status[i] = {"status": "done" if done else "pending",
                     "outputs": [f"{i}.qcirc", f"{i}.json"]}

    def save():
        _write_json(manifest_path, {"command": "compress", "config": cfg,
                                    "configDigest": digest, "seed": seed,
                                    "items": {k: status[k] for k in sorted(status)}})

    save()
    jobs = [(i, im, cfg, str(out)) for i, im in zip(ids, images)
            if status[i]["status"] != "done"]
    failed = []
    n_workers = args.jobs or os.cpu_count() or 1
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
            futures = [(job[0], pool.submit(_compress_item, job)) for job in jobs]
            for item_id, fut in futures:
                try:
                    fut.result()
                    status[item_id]["status"] = "done"
                except Exception as exc:  # noqa: BLE001 - recorded per item
                    status[item_id]["status"] = "failed"
                    failed.append((item_id, exc))
                save()
    else:
        for job in jobs:
            try:
                _compress_item(job)
                status[job[0]]["status"] = "done"
            except Exception as exc:  # noqa: BLE001 - recorded per item
                status[job[0]]["status"] = "failed"
                failed.append((job[0], exc))
            save()
    for item_id, exc in failed:
        print(f"compress: item {item_id} failed: {exc}", file=sys.stderr)
    print(f"compress: {len(ids) - len(failed)}/{len(ids)} items done")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    try:
        text = Path(args.circuit).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read circuit: {exc}") from None
    try:
        dc = circuit.parse_circuit(text)
    except circuit.CircuitParseError as exc:
        print(f"verify: {args.circuit}: {exc}", file=sys.stderr)
        return 2
    scheme = _scheme(args.scheme)
    if args.image:
        try:
            img = imgenc.load_pnm(Path(args.image).read_bytes())
        except (OSError, imgenc.FormatError) as exc:
            raise UsageError(f"cannot read image: {exc}") from None
        if args.side:
            img = imgenc.prepare_image(img, args.side)
    else:
        ids, images, _ = load_dataset(args.dataset, None if args.index is None else args.index + 1,
                                      _seed(args), args.side)
        if args.index is None or args.index >= len(images):
            raise UsageError("--index must select an image of the dataset")
        img = images[args.index]
    spec = imgenc.EncodingSpec(scheme, args.ordering, args.patches)
    target = mpslib.mps_from_image(_grayscale(img, scheme), spec)
    if len(target) != dc.n_qubits:
        print(f"verify: circuit has {dc.n_qubits} qubits, image needs {len(target)}",
              file=sys.stderr)
        return 1
    inf = optimizer.infidelity(target, dc)
    print(f"infidelity {inf:.17g}")
    return 0 if inf <= args.threshold else 1


# ---------------------------------------------------------------------------
# encode / gram


def _encode(images, scheme, ordering, patches, copies=1):
    spec = imgenc.EncodingSpec(scheme, ordering, patches, copies)
    return [mpslib.mps_from_image(_grayscale(im, scheme), spec) for im in images]


def cmd_encode(args) -> int:
    seed = _seed(args)
    ids, images, labels = load_dataset(args.dataset, args.limit, seed, args.side)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    states = _encode(images, _scheme(args.scheme), args.ordering, args.patches, args.copies)
    for i, m in zip(ids, states):
        (out / f"{i}.mps").write_bytes(mpslib.dumps(m))
    if labels is not None:
        _write_csv(out / "labels.csv", [{"id": i, "label": int(l)} for i, l in zip(ids, labels)])
    print(f"encode: wrote {len(ids)} states")
    return 0


def cmd_gram(args) -> int:
    src = Path(args.states)
    if not src.is_dir():
        raise UsageError(f"{src} is not a directory")
    files = sorted(src.glob("*.mps"))
    try:
        states = [mpslib.loads(f.read_bytes()) for f in files]
    except ValueError as exc:
        print(f"gram: {exc}", file=sys.stderr)
        return 1
    states = [s.scaled(1.0 / s.norm()) for s in states]
    k = classify.kernel_gram(states)
    ids = [f.stem for f in files]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + ids)
    for i, row in zip(ids, k):
        w.writerow([i] + [repr(float(v)) for v in row])
    Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    print(f"gram: {len(ids)}x{len(ids)} kernel written")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    seed = _seed(args)
    spec = args.dataset
    if spec == "digits" and args.classes:
        spec = f"digits:{args.classes}"
    ids, images, labels = load_dataset(spec, args.limit, seed, args.side, args.labels)
    if labels is None:
        raise UsageError("training needs a labelled dataset (IDX data: --labels PATH)")
    if args.model in ("vqc", "nlvqc") and args.copies != 1:
        raise UsageError("circuit classifiers take a single copy")
    states = _encode(images, _scheme(args.scheme), args.ordering, args.patches, args.copies)
    L = len(states[0])
    if args.model in ("mps", "mpo"):
        cfg = classify.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                                   learning_rate=args.lr or 1e-4, seed=seed)

        def make(tr_states, tr_labels, fold):
            if args.init == "warm":
                return classify.init_warmstart(args.model, tr_states[:1000], tr_labels[:1000],
                                               args.chi)
            return classify.init_random(args.model, L, args.chi, seed=seed + fold)
    else:
        cfg = classify.TrainConfig.for_vqc(epochs=args.epochs, batch_size=args.batch_size,
                                           seed=seed, **({"learning_rate": args.lr}
                                                         if args.lr else {}))
        states = [s.to_dense() for s in states]
        cls = classify.LinearVQC if args.model == "vqc" else classify.NonlinearVQC

        def make(tr_states, tr_labels, fold):
            return cls.init(L, args.layers, seed=seed + fold)
    report = classify.train(make, states, labels, cfg, folds=args.folds,
                            model_name=args.model, dataset=spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, report)
    print(f"train: mean validation accuracy {report['mean']:.4f} +- {report['std']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# experiments


def cmd_experiment(args) -> int:
    seed = _seed(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": f"experiment {args.kind}", "seed": seed, "config": {}}
    if args.kind == "entropy":
        schemes = [_scheme(s) for s in args.schemes.split(",")]
        orderings = args.orderings.split(",")
        res = [int(r) for r in args.resolutions.split(",")]
        _, images, _ = load_dataset(args.dataset, args.limit, seed)
        rows = analysis.experiment_entropy_scaling(images, schemes, orderings, res)
        # one column per scheme, keyed by ordering and resolution
        table = {}
        for r in rows:
            key = (r["ordering"], r["resolution"])
            table.setdefault(key, {"ordering": r["ordering"], "resolution": r["resolution"],
                                   "qubits_" + r["scheme"]: r["qubits"]})
            table[key]["qubits_" + r["scheme"]] = r["qubits"]
            table[key][r["scheme"]] = r["mean"]
        wide = [table[k] for k in sorted(table)]
        header = ["ordering", "resolution"] + schemes + ["qubits_" + s for s in schemes]
        _write_csv(out / "entropy.csv", wide, header)
        _write_csv(out / "entropy_long.csv", rows)
        manifest["config"] = {"schemes": schemes, "orderings": orderings, "resolutions": res,
                              "cuts": "max over all contiguous cuts"}
    elif args.kind == "cnot":
        _, images, _ = load_dataset(args.dataset, args.limit, seed, args.side)
        images = [_grayscale(im, "frqi") for im in images]
        gate_sets = args.gatesets.split(",")
        for g in gate_sets:
            if g not in circuit.GATE_SETS:
                raise UsageError(f"unknown gate set {g!r}")
        layers = [int(d) for d in args.layers.split(",")]
        rows, fits = analysis.experiment_infidelity_vs_cnot(images, gate_sets, layers,
                                                            refine=args.bfgs)
        _write_csv(out / "infidelity_vs_cnot.csv", rows)
        _write_csv(out / "fits.csv", [{"gateSet": g, "alpha": f["alpha"], "beta": f["beta"]}
                                      for g, f in fits.items() if f is not None])
        manifest["config"] = {"gateSets": gate_sets, "layers": layers, "fitWindow": layers}
    elif args.kind == "resolution":
        _, images, _ = load_dataset(args.dataset, args.limit, seed)
        res = [int(r) for r in args.resolutions.split(",")]
        spec = imgenc.EncodingSpec(_scheme(args.scheme))
        if spec.scheme != "frqi" and any(np.ndim(im) == 2 for im in images):
            raise UsageError(f"{spec.scheme} needs color images; use --scheme frqi")
        rows = []
        for k, img in enumerate(images):
            r, _ = analysis.experiment_infidelity_vs_resolution(img, res, args.depth,
                                                                spec=spec)
            rows += [{"image": k, **x} for x in r]
        means = {}
        for r in rows:
            means.setdefault(r["qubits"], []).append(r["infidelity"])
        summary = [{"qubits": q, **analysis.summarize(v)} for q, v in sorted(means.items())]
        _write_csv(out / "infidelity_vs_resolution.csv", summary)
        pts = [(s["qubits"], s["mean"]) for s in summary if s["mean"] > 0]
        if len(pts) >= 4:
            fit = analysis.fit_gompertz(pts)
            _write_csv(out / "gompertz.csv", [{**fit.params, "flags": ";".join(fit.flags)}])
        manifest["config"] = {"resolutions": res, "depth": args.depth}
    else:
        raise UsageError(f"unknown experiment {args.kind!r}")
    _write_json(out / "manifest.json", manifest)
    print(f"experiment {args.kind}: results in {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _encoding_flags(p, side=32):
    p.add_argument("--scheme", default="frqi")
    p.add_argument("--ordering", default="hierarchical", choices=imgenc.ORDERINGS)
    p.add_argument("--patches", type=int, default=1)
    p.add_argument("--side", type=int, default=side)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qpix", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with default flag values")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compress", help="compile images into circuits")
    p.add_argument("--dataset", required=True)
    p.add_argument("--limit", type=int)
    p.add_argument("--gateset", default="so4")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--no-bfgs", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _encoding_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("verify", help="infidelity of a circuit file against an image")
    p.add_argument("--circuit", required=True)
    p.add_argument("--image", help="PGM/PPM file")
    p.add_argument("--dataset", default="digits")
    p.add_argument("--index", type=int)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--seed", type=int)
    _encoding_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("encode", help="write encoded states in MPS1 format")
    p.add_argument("--dataset", required=True)
    p.add_argument("--limit", type=int)
    p.add_argument("--copies", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _encoding_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("gram", help="fidelity-kernel Gram matrix as CSV")
    p.add_argument("--states", required=True, help="directory of .mps files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("train", help="cross-validated classifier training")
    p.add_argument("--model", default="mps", choices=("mps", "mpo", "vqc", "nlvqc"))
    p.add_argument("--dataset", default="digits")
    p.add_argument("--labels", help="IDX label file for idx: datasets")
    p.add_argument("--classes", default="")
    p.add_argument("--limit", type=int, default=200)
    p.add_argument("--chi", type=int, default=16)
    p.add_argument("--copies", type=int, default=1)
    p.add_argument("--layers", type=int, default=1, help="circuit layers (VQC models)")
    p.add_argument("--init", default="random", choices=("random", "warm"))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="train_report.json")
    _encoding_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="scaling experiments")
    p.add_argument("kind", choices=("entropy", "cnot", "resolution"))
    p.add_argument("--dataset", default="natural")
    p.add_argument("--limit", type=int, default=10)
    p.add_argument("--schemes", default="mcrqi,dmulti,tmulti")
    p.add_argument("--orderings", default="hierarchical")
    p.add_argument("--resolutions", default="4,8,16,32,64")
    p.add_argument("--gatesets", default="so4,su4,sparse")
    p.add_argument("--layers", default="2,4,8")
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--scheme", default="mcrqi")
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--bfgs", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _load_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    except UsageError as exc:
        print(f"qpix: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level runtime failure
        print(f"qpix: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
