"""Single driver executable: data generation, matching, training,
evaluation, gradient checking, and the component ablation sweep.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 gradient
check failure. PAVSGG_THREADS caps worker parallelism for the
embarrassingly parallel stages (default: all cores).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import checks
from .autodiff import load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    RunConfig,
    default_run_config,
    load_run_config,
    run_config_from_dict,
)
from .evaluation import evaluate, write_histograms_csv, write_metrics_csv
from .matching import match_middle_frame, pseudo_label_metrics
from .model import ModelConfig, RelationModel
from .scene import ClipRecord, dump_json, generate_dataset, load_dataset, write_dataset
from .training import train_step1, train_step2, write_train_log


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _worker_count() -> int:
    raw = os.environ.get("PAVSGG_THREADS", "")
    if raw.strip():
        return max(1, int(raw))
    return os.cpu_count() or 1


def _load_config(path: str | None, seed_override: int | None) -> RunConfig:
    if seed_override is None:
        return load_run_config(path) if path else default_run_config()
    # Re-derive from the raw document so the override reaches section seeds.
    raw = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    raw["seed"] = seed_override
    return run_config_from_dict(raw)


def _write_run_stamp(out_dir: Path, cfg: RunConfig, command: str):
    stamp = {"command": command, "seed": cfg.seed}
    (out_dir / "run.json").write_text(dump_json(stamp), encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(k: int):
        return generate_dataset(replace(cfg.gen, clips=1), first_clip_seed=k)[0]

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        produced = list(pool.map(one, range(cfg.gen.clips)))
    count = write_dataset(produced, out)
    _write_run_stamp(out, cfg, "gen-data")
    print(f"wrote {count} dataset files to {out}")
    return 0


def _build_partitions(records, cfg: RunConfig):
    return {
        r.clip.clip_id: match_middle_frame(r.clip, r.attention, cfg.ram, cfg.model.subject_class)
        for r in records
    }


def cmd_ram_match(args) -> int:
    cfg = _load_config(args.config, args.seed)
    records = load_dataset(args.data)
    if not records:
        raise ConfigError(f"no clips found under {args.data}")
    out = Path(args.out)
    (out / "partitions").mkdir(parents=True, exist_ok=True)
    metric_lines = ["clip_id,match_count,tp,precision,recall,f1"]
    for record in records:
        partition = match_middle_frame(
            record.clip, record.attention, cfg.ram, cfg.model.subject_class
        )
        doc = {
            "clip_id": record.clip.clip_id,
            "t": partition.frame_index,
            "positives": [
                {"s": p.subject_id, "o": p.object_id, "predicates": list(p.predicates)}
                for p in partition.positives
            ],
            "negatives": [[s, o] for s, o in partition.negatives],
        }
        (out / "partitions" / f"{record.clip.clip_id}.json").write_text(
            dump_json(doc), encoding="utf-8"
        )
        mid = record.clip.middle_frame
        if mid.oracle_gt is not None:
            m = pseudo_label_metrics(partition, mid)
            metric_lines.append(
                f"{record.clip.clip_id},{m.match_count},{m.true_positives},"
                f"{m.precision!r},{m.recall!r},{m.f1!r}"
            )
    (out / "metrics.csv").write_text("\n".join(metric_lines) + "\n", encoding="utf-8")
    _write_run_stamp(out, cfg, "ram-match")
    print(f"matched {len(records)} clips into {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed)
    records = load_dataset(args.data)
    if not records:
        raise ConfigError(f"no clips found under {args.data}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    partitions = _build_partitions(records, cfg)
    if args.step == 1:
        result = train_step1(records, partitions, cfg.model, cfg.loss, cfg.train)
    else:
        if not args.teacher:
            raise UsageError("--teacher is required for --step 2")
        teacher = _load_model(args.teacher)
        result = train_step2(records, partitions, teacher, cfg.model, cfg.loss, cfg.train)
    save_checkpoint(result.model.params, out / "checkpoint")
    (out / "model_config.json").write_text(
        dump_json(result.model.cfg.to_dict()), encoding="utf-8"
    )
    write_train_log(result.log_rows, out / "train_log.csv")
    _write_run_stamp(out, cfg, f"train-step{args.step}")
    print(f"trained step {args.step} on {len(records)} clips; checkpoint in {out}")
    return 0


def _load_model(ckpt_base: str) -> RelationModel:
    base = Path(ckpt_base)
    if base.is_dir():
        base = base / "checkpoint"
    config_path = base.parent / "model_config.json"
    if not config_path.exists():
        raise ConfigError(f"missing model config next to checkpoint: {config_path}")
    cfg = ModelConfig.from_dict(json.loads(config_path.read_text(encoding="utf-8")))
    return RelationModel(cfg, params=load_checkpoint(base))


def cmd_eval(args) -> int:
    cfg = _load_config(args.config, None)
    records = load_dataset(args.data)
    model = _load_model(args.ckpt)
    if args.pam is not None:
        model = model.with_gating(args.pam == "on")
    eval_cfg = replace(cfg.eval, pa_scoring=(args.pa == "on"))
    report = evaluate(records, model, eval_cfg, ram_cfg=cfg.ram)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dump_json(report.to_dict()), encoding="utf-8")
    write_metrics_csv(report, out / "metrics.csv")
    write_histograms_csv(report, out / "histograms.csv")
    _write_run_stamp(out, cfg, "eval")
    wc = report.recalls["with_constraint"]
    print("recall@k (with constraint): " + ", ".join(f"R@{k}={wc[k]:.4f}" for k in sorted(wc)))
    return 0


def cmd_gradcheck(args) -> int:
    results = checks.run_all()
    rows = []
    ok = True
    for r in results:
        status = "pass" if r.passed else "FAIL"
        ok &= r.passed
        print(f"[{status}] {r.name}: max rel err {r.max_relative_error:.3e} (tol {r.tolerance:g})")
        rows.append(
            {
                "name": r.name,
                "max_relative_error": float(r.max_relative_error),
                "tolerance": r.tolerance,
                "passed": r.passed,
            }
        )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.json").write_text(dump_json({"checks": rows}), encoding="utf-8")
    return 0 if ok else 3


ABLATION_ROWS = {
    "a": {"ram": False, "pals": False, "pam": False},
    "b": {"ram": False, "pals": True, "pam": False},
    "c": {"ram": False, "pals": True, "pam": True},
    "d": {"ram": True, "pals": False, "pam": False},
    "e": {"ram": True, "pals": True, "pam": False},
    "f": {"ram": True, "pals": True, "pam": True},
}


def run_ablation_row(cfg: RunConfig, row: dict, train_records, test_records):
    """Train and evaluate one component combination on fixed data."""
    ram_cfg = replace(cfg.ram, enabled=row["ram"])
    model_cfg = replace(cfg.model, pam_enabled=row["pam"])
    loss_cfg = replace(
        cfg.loss,
        lambda_pa=cfg.loss.lambda_pa if row["pals"] else 0.0,
        lambda_pam=cfg.loss.lambda_pam if row["pam"] else 0.0,
    )
    partitions = {
        r.clip.clip_id: match_middle_frame(r.clip, r.attention, ram_cfg, model_cfg.subject_class)
        for r in train_records
    }
    result = train_step1(train_records, partitions, model_cfg, loss_cfg, cfg.train)
    eval_cfg = replace(cfg.eval, pa_scoring=row["pals"])
    report = evaluate(test_records, result.model, eval_cfg, ram_cfg=ram_cfg)
    return report


def _parse_ablation_row(token: str) -> dict:
    """A canonical letter a-f, or an explicit '+'-joined flag set like
    'ram+pals' ('none' for the bare baseline)."""
    if token in ABLATION_ROWS:
        return ABLATION_ROWS[token]
    flags = set() if token == "none" else set(token.split("+"))
    unknown = flags - {"ram", "pals", "pam"}
    if unknown:
        raise ConfigError(f"unknown ablation row '{token}' (valid: a-f or ram/pals/pam sets)")
    return {"ram": "ram" in flags, "pals": "pals" in flags, "pam": "pam" in flags}


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    row_names = args.rows.split(",") if args.rows else list(ABLATION_ROWS)
    rows = {}
    for name in row_names:
        row = _parse_ablation_row(name)
        if row["pam"] and not row["pals"]:
            raise ConfigError(
                f"invalid combination '{name}': attention gating requires affinity learning"
            )
        rows[name] = row

    # Same world (class->predicate table), disjoint clip seeds.
    train_set = [
        ClipRecord(clip=c, attention=a) for c, a in generate_dataset(cfg.gen, first_clip_seed=0)
    ]
    test_gen = replace(cfg.gen, clips=max(4, cfg.gen.clips // 2))
    test_set = [
        ClipRecord(clip=c, attention=a)
        for c, a in generate_dataset(test_gen, first_clip_seed=10_000)
    ]

    lines = ["row,ram,pals,pam,wc_r10,wc_r20,wc_r50,nc_r10,nc_r20,nc_r50"]
    for name in row_names:
        row = rows[name]
        report = run_ablation_row(cfg, row, train_set, test_set)
        wc = report.recalls["with_constraint"]
        nc = report.recalls["no_constraint"]
        cells = [wc.get(10, 0.0), wc.get(20, 0.0), wc.get(50, 0.0),
                 nc.get(10, 0.0), nc.get(20, 0.0), nc.get(50, 0.0)]
        lines.append(
            f"{name},{int(row['ram'])},{int(row['pals'])},{int(row['pam'])},"
            + ",".join(repr(c) for c in cells)
        )
        print(f"row {name}: WC R@10 = {cells[0]:.4f}, NC R@10 = {cells[3]:.4f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_run_stamp(out, cfg, "ablate")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="pavsgg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("ram-match", help="build pseudo-label partitions")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ram_match)

    p = sub.add_parser("train", help="train the relation model")
    p.add_argument("--step", type=int, choices=(1, 2), required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--teacher", default=None, help="checkpoint base for step 2")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pa", choices=("on", "off"), default="on")
    p.add_argument("--pam", choices=("on", "off"), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate", help="component ablation sweep")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rows", default=None, help="comma-separated subset of a,b,c,d,e,f")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
