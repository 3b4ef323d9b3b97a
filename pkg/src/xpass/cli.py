"""Command line entry point: ``xpass <command> ...``.

Exit codes: 0 success, 2 usage/config error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time

import numpy as np

from xpass import compute as C
from xpass.attention import (
    CANONICAL, PROBSPARSE, ConfigError, attention_dot_products,
    canonical_attention, probsparse_attention,
)
from xpass.data import ingest, make_dataset, read_dataset, synth_generate, write_dataset
from xpass.harness import TrainConfig, counterfactual_diff, evaluate, predict_logits, train
from xpass.model import ModelConfig, heatmap, load_checkpoint, save_checkpoint
from xpass.zones import DataError

EXIT_USAGE = 2
EXIT_DATA = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _write_grid_csv(path, grid: np.ndarray):
    with open(path, "w") as fh:
        for row in grid:
            fh.write(",".join(f"{v:.10e}" for v in row) + "\n")


def cmd_ingest(args):
    ds, stats = ingest(args.tracking_home, args.tracking_away, args.events, args.grid, args.seed)
    write_dataset(args.out, ds)
    print(f"pass_rows={stats.pass_rows}")
    print(f"emitted={stats.emitted}")
    print(f"skipped_missing_end={stats.missing_end}")
    print(f"skipped_insufficient_history={stats.insufficient_history}")
    print(f"skipped_tracking_gap={stats.tracking_gap}")
    print(f"discarded_events={stats.discarded_events}")


def cmd_synth(args):
    samples = synth_generate(args.n, args.seed, grid=args.grid)
    write_dataset(args.out, make_dataset(samples, args.grid, args.seed, synth_seed=args.seed))
    print(f"samples={len(samples)}")


def cmd_train(args):
    ds = read_dataset(args.dataset)
    mc = ModelConfig(d_model=args.d_model, n_heads=args.heads, n_stacks=args.stacks,
                     blocks_per_stack=args.blocks, grid=ds.grid.scheme, mode=args.mode,
                     sampling_factor=args.factor, seed=args.seed)
    tc = TrainConfig(lr=args.lr, batch_size=args.batch, max_epochs=args.epochs,
                     patience=args.patience, seed=args.seed, grid=ds.grid.scheme)
    weights, hist = train(ds, mc, tc, progress=lambda e, a, b: print(
        f"epoch={e} train_loss={a:.6f} val_loss={b:.6f}", flush=True))
    save_checkpoint(args.out, mc, weights, {"history": hist.to_dict()})
    print(f"best_epoch={hist.best_epoch}")
    print(f"best_val_loss={hist.val_loss[hist.best_epoch]:.6f}")


def _load(args):
    config, weights, _ = load_checkpoint(args.model)
    ds = read_dataset(args.dataset)
    if ds.grid.scheme != config.grid:
        raise ConfigError(f"dataset grid {ds.grid.scheme} != model grid {config.grid}")
    return config, weights, ds


def cmd_eval(args):
    config, weights, ds = _load(args)
    split = ds.split(args.split)
    if not split:
        raise UsageError(f"split {args.split!r} is empty")
    rep = evaluate((config, weights), split, ds.grid)
    print(rep.table())
    for line in rep.lines():
        print(line)


def _sample(ds, event_id):
    try:
        return ds.find(event_id)
    except KeyError as exc:
        raise UsageError(str(exc)) from None


def cmd_heatmap(args):
    config, weights, ds = _load(args)
    s = _sample(ds, args.event)
    ctx = s.context[None] if config.context_dim else None
    lx, ly = predict_logits(weights, config, s.features[None], ctx)
    _write_grid_csv(args.out, heatmap(lx[0], ly[0], ds.grid))


def cmd_counterfactual(args):
    config, weights, ds = _load(args)
    s = _sample(ds, args.event)
    try:
        _, moved, js = counterfactual_diff((config, weights), s, args.entity, (args.dx, args.dy))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write_grid_csv(args.out, moved)
    print(f"js_divergence={js:.10e}")


def cmd_bench(args):
    lengths = [int(v) for v in args.lengths.split(",") if v.strip()]
    rng = np.random.default_rng(args.seed)
    d = 64
    print("length,mode,dot_products,bound,wall_time_s")
    for L in lengths:
        q, k, v = (C.Tensor(rng.standard_normal((L, d))) for _ in range(3))
        with C.no_grad():
            t0 = time.perf_counter()
            canonical_attention(q, k, v)
            tc = time.perf_counter() - t0
            t0 = time.perf_counter()
            _, rep = probsparse_attention(q, k, v, args.factor, args.seed, return_report=True)
            tp = time.perf_counter() - t0
        print(f"{L},{CANONICAL},{attention_dot_products(L, L, args.factor, CANONICAL)},{L * L},{tc:.6f}")
        bound = L * math.ceil(args.factor * math.log(L)) + math.ceil(args.factor * math.log(L)) * L
        print(f"{L},{PROBSPARSE},{rep.dot_product_count},{bound},{tp:.6f}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xpass", description="Pass end-location prediction from tracking data")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="Metrica-format tracking + events -> dataset")
    s.add_argument("--tracking-home", required=True)
    s.add_argument("--tracking-away", required=True)
    s.add_argument("--events", required=True)
    s.add_argument("--grid", choices=["coarse", "fine"], default="coarse")
    s.add_argument("--seed", type=int, default=0, help="split seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="synthetic nearest-teammate dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--grid", choices=["coarse", "fine"], default="coarse")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train")
    s.add_argument("--dataset", required=True)
    s.add_argument("--d-model", type=int, default=512)
    s.add_argument("--heads", type=int, default=8)
    s.add_argument("--stacks", type=int, default=2)
    s.add_argument("--blocks", type=int, default=3)
    s.add_argument("--mode", choices=[CANONICAL, PROBSPARSE], default=PROBSPARSE)
    s.add_argument("--factor", type=int, default=5)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--patience", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", choices=["train", "val", "test"], default="test")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("heatmap")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--event", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_heatmap)

    s = sub.add_parser("counterfactual")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--event", required=True)
    s.add_argument("--entity", type=int, required=True)
    s.add_argument("--dx", type=float, default=0.0)
    s.add_argument("--dy", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_counterfactual)

    s = sub.add_parser("bench-attention")
    s.add_argument("--lengths", default="64,128,256,512,1024")
    s.add_argument("--factor", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
