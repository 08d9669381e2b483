"""Command-line entry point: simulate | train | classify | evaluate | sweep-rmse.

Exit status: 0 success (classify: no breakage), 1 breakage classified,
2 breakage with a low-confidence, tie or inconsistency flag, 3 or more on
errors (3 bad input or schema, 4 hygiene violation).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from ..detector import DetectionReport, detect, label
from ..netmodel import NetworkError, model_from_dict
from ..pca import rmse_curve, train
from .bundle import BundleError, ModelBundle, train_bundle
from .dataset import (DatasetError, group_cases, is_case_dataset, read_rows,
                      simulate_cases, simulate_training, write_rows)
from .evaluate import HygieneError, evaluate
from .suite import ScenarioSuite, Simulator, class_configs, class_mode, derive_seed

EXIT_OK, EXIT_BREAK, EXIT_FLAGGED, EXIT_INPUT, EXIT_HYGIENE = 0, 1, 2, 3, 4

log = logging.getLogger("railbreak")


def _suite(args) -> ScenarioSuite:
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    if getattr(args, "seed", None) is not None:
        d["seed_base"] = args.seed
    for key, attr in (("classes", "classes"), ("soils", "soil"), ("snr_list_db", "snr"),
                      ("trials_per_snr", "trials"), ("kasami_degree", "degree")):
        v = getattr(args, attr, None)
        if v is not None:
            d[key] = v
    return ScenarioSuite.from_dict(d)


def cmd_simulate(args) -> int:
    suite = _suite(args)
    rows = simulate_cases(suite) if args.cases else simulate_training(suite)
    write_rows(rows, args.out)
    log.info("wrote %d rows to %s", len(rows), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    rows = read_rows(args.dataset)
    if is_case_dataset(rows):
        raise DatasetError("train needs a training dataset, not a case dataset")
    suite = _suite(args)
    soils = sorted({r.soil for r in rows})
    if len(soils) != 1:
        raise DatasetError(f"dataset must hold exactly one soil, found {soils}")
    meta = Simulator(soils[0], suite.base, suite.kasami_degree).describe()
    phases = (1, 2, 3) if args.phase == "all" else (int(args.phase),)
    bundle = train_bundle(rows, phases, meta=meta)
    out = Path(args.out)
    if args.phase != "all" and out.exists():
        bundle = ModelBundle.load(out).merged(bundle)
    bundle.save(out)
    for p in phases:
        for name, m in bundle.phases[p].items():
            flag = "  (flagged: RMSE cap missed)" if m.flagged else ""
            print(f"phase {p}  {name:<8} m={m.order}  RMSE(m)={m.rmse_at_m:.4f}{flag}")
    return EXIT_OK


def _exit_for(report: DetectionReport) -> int:
    if not report.breakage:
        return EXIT_OK
    tie = any(res is not None and res.tie for res in (report.phase2, report.phase3))
    if not report.high_confidence or report.consistency is False or tie:
        return EXIT_FLAGGED
    return EXIT_BREAK


def _scenario_measurements(bundle: ModelBundle, scenario: dict, seed: int, snr_db: float):
    meta = bundle.meta
    if not meta:
        raise BundleError("bundle has no simulator description; cannot simulate a scenario")
    sim = Simulator.from_description(meta)
    soil = scenario.get("soil", meta["soil"])
    if soil != meta["soil"]:
        raise DatasetError(f"scenario soil {soil!r} differs from the bundle's {meta['soil']!r}")
    brk = model_from_dict({"breakages": scenario.get("breakages", [])}).breakages
    return sim.measure_case(brk, snr_db, seed)


def cmd_classify(args) -> int:
    bundle = ModelBundle.load(args.bundle)
    if not bundle.covers_all_phases():
        raise BundleError("bundle does not cover all 22 classes")
    results = []
    if args.scenario:
        scenario = json.loads(Path(args.scenario).read_text())
        seed = args.seed if args.seed is not None else int(scenario.get("seed", 0))
        snr = args.snr if args.snr is not None else float(scenario.get("snr_db", math.inf))
        results.append(("scenario", detect(bundle, _scenario_measurements(bundle, scenario, seed, snr))))
    else:
        cases = group_cases(read_rows(args.cases))
        if args.case_id:
            cases = [c for c in cases if c.case_id == args.case_id]
            if not cases:
                raise DatasetError(f"no case {args.case_id!r} in {args.cases}")
        results = [(c.case_id, detect(bundle, c.measurements)) for c in cases]

    docs = [{"case": cid, **r.to_dict()} for cid, r in results]
    text = json.dumps(docs[0] if len(docs) == 1 else docs, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    for cid, r in results:
        print(f"== {cid}", file=sys.stderr)
        print(r.render_text(), file=sys.stderr)
    return max(_exit_for(r) for _, r in results)


def cmd_evaluate(args) -> int:
    bundle = ModelBundle.load(args.bundle)
    rows = read_rows(args.dataset)
    summary = evaluate(bundle, rows, check=not args.allow_overlap)
    Path(args.out).write_text(summary.to_json() + "\n")
    print(f"cases: {summary.n_cases}  success rate: {summary.success_rate:.4f}  "
          f"margin<0.05: {summary.margins['fraction_below_0.05']:.4f}")
    return EXIT_OK


def sweep_rmse(suite: ScenarioSuite) -> list[tuple]:
    """RMSE(m) for every soil, SNR and class, each SNR trained on its own trials."""
    out = []
    for soil in suite.soils:
        sim = Simulator(soil, suite.base, suite.kasami_degree)
        for name in suite.classes:
            cls = label(name)
            configs, mode, ci = class_configs(cls), class_mode(cls), suite.class_index(name)
            for si, snr in enumerate(suite.snr_list_db):
                x = np.stack([sim.measure(configs[k % len(configs)], mode, snr,
                                          derive_seed(suite.seed_base, ci, si, k)).components
                              for k in range(suite.trials_per_snr)])
                curve = rmse_curve(train(x, class_label=name).eigenvalues)
                out += [(soil, snr, name, m, float(curve[m])) for m in range(len(curve))]
    return out


def cmd_sweep_rmse(args) -> int:
    suite = _suite(args)
    if args.classes is None and not args.config:
        suite = ScenarioSuite(**{**suite.__dict__, "classes": ("1OK",)})
    rows = sweep_rmse(suite)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["soil", "snr_db", "class", "m", "rmse"])
    for soil, snr, name, m, r in rows:
        w.writerow([soil, repr(snr), name, m, repr(r)])
    Path(args.out).write_text(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="railbreak", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="suite JSON file (see docs/scenario_schema.json)")
        sp.add_argument("--seed", type=int, help="seed base; overrides the suite's seed_base")
        sp.add_argument("--out", required=out_required, help="output file")

    def suite_overrides(sp):
        sp.add_argument("--classes", nargs="+", help="class names, e.g. 1OK 1ie R1e3/4")
        sp.add_argument("--soil", nargs="+", choices=["dry", "wet"], help="soil presets")
        sp.add_argument("--snr", nargs="+", type=float, help="SNR list in dB (inf for no noise)")
        sp.add_argument("--trials", type=int, help="trials per SNR")
        sp.add_argument("--degree", type=int, help="Kasami code degree (even, 4..16)")

    sp = sub.add_parser("simulate", help="generate a training or case dataset (CSV)")
    common(sp)
    suite_overrides(sp)
    sp.add_argument("--cases", action="store_true",
                    help="write detection cases (three rows each) instead of training rows")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="train class models from a dataset into a bundle (JSON)")
    sp.add_argument("dataset", help="training dataset CSV")
    sp.add_argument("--phase", choices=["1", "2", "3", "all"], default="all",
                    help="phase to train; a single phase is merged into an existing --out bundle")
    sp.add_argument("--degree", type=int,
                    help="Kasami degree the dataset was simulated with (recorded in the bundle)")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("classify", help="run detection and print the report")
    sp.add_argument("bundle", help="model bundle JSON")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--cases", help="case dataset CSV")
    src.add_argument("--scenario", help="scenario JSON with breakages (and optional snr_db, seed)")
    sp.add_argument("--case-id", help="classify only this case of --cases")
    sp.add_argument("--snr", type=float, help="SNR for --scenario, dB (default: no noise)")
    common(sp, out_required=False)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("evaluate", help="score a bundle on a labelled case dataset")
    sp.add_argument("bundle", help="model bundle JSON")
    sp.add_argument("dataset", help="case dataset CSV")
    sp.add_argument("--allow-overlap", action="store_true",
                    help="skip the check that test seeds were not used in training")
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep-rmse", help="RMSE(m) per soil, SNR and class (CSV)")
    common(sp)
    suite_overrides(sp)
    sp.set_defaults(func=cmd_sweep_rmse)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except HygieneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HYGIENE
    except (BundleError, DatasetError, NetworkError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
