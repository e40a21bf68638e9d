"""Command-line entry point: ``fedcorr {run,probe,breakeven,horizon}``.

Exit codes: 0 on success, 1 on runtime failure, 2 on an invalid command
line or configuration. Set ``FEDCORR_LOG`` (``DEBUG``, ``INFO``, ...) to
control log verbosity; the default is ``WARNING``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from fedcorr.errors import FedCorrError, InvalidInput
from fedcorr.fedsim import FedConfig, probe_correlations, run_experiment
from fedcorr.ingest import load_mnist, parse_libsvm, synth_linreg, synth_logreg, to_pm1
from fedcorr.models import build_model

log = logging.getLogger("fedcorr")

SUMMARY_COLUMNS = ("scheme", "rounds_to_target", "uplink", "downlink", "total")


class ConfigError(Exception):
    """Configuration that cannot be run as written (exit code 2)."""


# -- cost calculators --------------------------------------------------------


def breakeven(m: int, r: int) -> int:
    """Smallest reuse count ``j`` with ``m*r + r*j < j*m``.

    Sending an ``m x r`` basis once and ``r`` coefficients per round beats
    sending ``m`` raw elements per round from this many rounds on.
    """
    if isinstance(m, bool) or isinstance(r, bool) or int(m) != m or int(r) != r:
        raise InvalidInput("m and r must be integers")
    m, r = int(m), int(r)
    if r <= 0:
        raise InvalidInput(f"r={r} must be positive")
    if r >= m:
        raise InvalidInput(f"r={r} >= m={m}: reuse never beats raw transmission")
    return (m * r) // (m - r) + 1


@dataclass(frozen=True)
class Horizon:
    """Basis-reuse horizon; ``None`` fields mean unbounded (``c == 1``)."""

    primary: int | None
    alternate: int | None
    theta: float

    @property
    def unbounded(self) -> bool:
        return self.primary is None


def _floor_ratio(num: float, den: float) -> int:
    # rounding first keeps e.g. 2*pi / (pi/4) = 7.999999999 at 8
    return int(math.floor(round(num / den, 9)))


def horizon(c: float) -> Horizon:
    """Reuse horizon for a per-round cosine lower bound ``c`` in ``(0, 1]``.

    ``primary`` is ``floor(2*pi / theta)`` with ``theta = arccos(c)``;
    ``alternate`` is ``floor(pi / (2*theta))``, the count that keeps the
    accumulated angle within a right angle.
    """
    c = float(c)
    if not 0.0 < c <= 1.0:
        raise InvalidInput(f"cosine bound {c} outside (0, 1]")
    theta = math.acos(c)
    if theta == 0.0:
        return Horizon(None, None, 0.0)
    return Horizon(_floor_ratio(2 * math.pi, theta), _floor_ratio(math.pi / 2, theta), theta)


# -- configuration -----------------------------------------------------------


def load_schema() -> dict:
    text = resources.files("fedcorr").joinpath("config_schema.json").read_text()
    return json.loads(text)


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from None
    cfg["_base"] = str(path.parent)
    return cfg


def _resolve(base: str, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else Path(base) / q


def build_dataset(cfg: dict):
    ds_cfg = cfg["dataset"]
    kind = ds_cfg["kind"]
    seed = ds_cfg.get("seed", cfg["fed"].get("seed", 0))
    base = cfg.get("_base", ".")
    if kind == "synth_linreg":
        ds = synth_linreg(ds_cfg.get("n", 1000), ds_cfg.get("d", 20), ds_cfg.get("noise", 0.1), seed)
    elif kind == "synth_logreg":
        ds = synth_logreg(
            ds_cfg.get("n", 1000),
            ds_cfg.get("d", 20),
            ds_cfg.get("margin", 0.1),
            seed,
            groups=ds_cfg.get("groups", 10),
            spread=ds_cfg.get("spread", 2.0),
        )
    elif kind == "mnist":
        if "images" not in ds_cfg or "labels" not in ds_cfg:
            raise ConfigError("dataset kind mnist needs 'images' and 'labels'")
        ds = load_mnist(
            _resolve(base, ds_cfg["images"]),
            _resolve(base, ds_cfg["labels"]),
            limit=ds_cfg.get("limit"),
            side=ds_cfg.get("side"),
        )
    else:
        if "path" not in ds_cfg:
            raise ConfigError("dataset kind libsvm needs 'path'")
        with open(_resolve(base, ds_cfg["path"])) as fh:
            ds = parse_libsvm(fh, ds_cfg.get("dim"))
    if cfg["model"]["kind"] == "logreg":
        ds.labels = to_pm1(ds.labels)
    return ds


def build_fed_config(cfg: dict, scheme: str, seed: int | None = None, strict_paper_pca: bool = False):
    fed = dict(cfg["fed"])
    if seed is not None:
        fed["seed"] = seed
    sub = dict(cfg.get("scheme_config", {}))
    sub.update(cfg.get("scheme_overrides", {}).get(scheme, {}))
    if strict_paper_pca:
        sub["strict_paper_pca"] = True
    return FedConfig(scheme=scheme, scheme_config=sub, **fed)


def _model_for(cfg: dict, ds):
    m = cfg["model"]
    return build_model(
        m["kind"],
        ds.feature_dim,
        classes=m.get("classes", 10),
        hidden=m.get("hidden", 120),
        slice_rows=m.get("slice_rows"),
    )


def _effective(cfg: dict, seed, strict: bool) -> dict:
    """Config with command-line overrides applied, as written to the output dir."""
    out = {k: v for k, v in cfg.items() if not k.startswith("_")}
    if seed is not None:
        out["fed"] = dict(out["fed"], seed=seed)
    if strict:
        out["scheme_config"] = dict(out.get("scheme_config", {}), strict_paper_pca=True)
    return out


# -- commands ----------------------------------------------------------------


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _state_rows(scheme: str, result):
    for rec in result.records:
        for layer, tags in rec.states.items():
            info = rec.info.get(layer, {})
            yield {
                "round": rec.round,
                "scheme": scheme,
                "layer": layer,
                "states": tags,
                "sharing_case": info.get("sharing_case"),
                "r": info.get("r"),
                "uplink": info.get("uplink"),
            }


def cmd_run(cfg: dict, out_dir: Path, seed=None, strict: bool = False) -> list:
    ds = build_dataset(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    rounds, states, summary = [], [], []
    for scheme in cfg.get("schemes", ["none"]):
        fed = build_fed_config(cfg, scheme, seed, strict)
        log.info("running %s for %d rounds", scheme, fed.T)
        result = run_experiment(fed, _model_for(cfg, ds), ds)
        rounds += [dict(rec.as_dict(), scheme=scheme) for rec in result.records]
        states += list(_state_rows(scheme, result))
        summary.append(result.summary(scheme, fed.target_accuracy))
    _write_jsonl(out_dir / "rounds.jsonl", rounds)
    _write_jsonl(out_dir / "states.jsonl", states)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        for row in summary:
            writer.writerow({k: "" if row[k] is None else row[k] for k in SUMMARY_COLUMNS})
    (out_dir / "config.json").write_text(json.dumps(_effective(cfg, seed, strict), indent=2) + "\n")
    return summary


def cmd_probe(cfg: dict, out_dir: Path, seed=None, strict: bool = False) -> list:
    ds = build_dataset(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    fed = build_fed_config(cfg, "none", seed, strict)
    probe = cfg.get("probe", {})
    sub = cfg.get("scheme_config", {})
    readings = probe_correlations(
        fed,
        _model_for(cfg, ds),
        ds,
        beta=probe.get("beta", sub.get("beta", 0.2)),
        h=probe.get("h", sub.get("h", 5)),
        strict_paper=strict or sub.get("strict_paper_pca", False),
    )
    _write_jsonl(out_dir / "correlation.jsonl", [json.loads(r.to_json()) for r in readings])
    return readings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcorr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override fed.seed")
        p.add_argument("--out-dir", help="output directory (default: config out_dir or ./out)")
        p.add_argument(
            "--strict-paper-pca",
            action="store_true",
            help="evaluate PCA correlation at rank ceil(beta*p) instead of ceil(beta*min(p, samples))",
        )
        return p

    experiment("run", "train with each configured scheme and write JSONL/CSV outputs")
    experiment("probe", "train uncompressed and record correlation readings per round")

    p = sub.add_parser("breakeven", help="rounds of basis reuse needed to beat raw transmission")
    p.add_argument("m", type=int, help="slice length")
    p.add_argument("r", type=int, help="basis rank")

    p = sub.add_parser("horizon", help="basis-reuse horizon for a cosine lower bound")
    p.add_argument("c", type=float, help="per-round cosine similarity lower bound")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("FEDCORR_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "breakeven":
            print(breakeven(args.m, args.r))
        elif args.command == "horizon":
            h = horizon(args.c)
            if h.unbounded:
                print("horizon unbounded")
                print("alternate unbounded")
            else:
                print(f"horizon {h.primary}")
                print(f"alternate {h.alternate}")
        else:
            cfg = load_config(args.config)
            out_dir = Path(args.out_dir or cfg.get("out_dir", "out"))
            if args.command == "run":
                rows = cmd_run(cfg, out_dir, args.seed, args.strict_paper_pca)
                writer = csv.DictWriter(sys.stdout, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
                writer.writeheader()
                writer.writerows(rows)
            else:
                readings = cmd_probe(cfg, out_dir, args.seed, args.strict_paper_pca)
                print(f"{len(readings)} readings written to {out_dir / 'correlation.jsonl'}")
    except ConfigError as exc:
        print(f"fedcorr: {exc}", file=sys.stderr)
        return 2
    except InvalidInput as exc:
        print(f"fedcorr: {exc}", file=sys.stderr)
        return 2 if args.command in ("breakeven", "horizon") else 1
    except (FedCorrError, OSError, ValueError) as exc:
        print(f"fedcorr: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
