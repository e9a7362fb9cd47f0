"""Command-line front end: generate, train, eval, bench, selftest.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
"""

from __future__ import annotations

import logging
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import dataset as dsmod
from .config import ConfigError, RunConfig, parse_assignments, resolve
from .errors import DataError, NumericalError, ResourceError
from .evaluation import benchmark, chirped_generalization_test, evaluate_record
from .lindblad import flipped_commutator_sign
from .modelio import load_model, save_model
from .nn.model import EmulatorNet
from .nn.train import train as train_net

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("dqe")


def _resolve(ctx: click.Context, **flags) -> RunConfig:
    overrides = parse_assignments(ctx.obj["set"])
    overrides.update(flags)
    cfg = resolve(ctx.obj["config"], overrides)
    click.echo("# resolved configuration")
    click.echo(cfg.as_text())
    click.echo("#")
    return cfg


def _require_path(value: str, flag: str) -> str:
    if not value:
        raise click.UsageError(f"{flag} is required (flag or config key)")
    return value


def _write(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from None


def _sim_from_meta(meta: dict, fallback: RunConfig) -> dsmod.SimulationConfig:
    if "simulation" in meta:
        return dsmod.SimulationConfig.from_dict(meta["simulation"])
    return fallback.simulation()


@click.group()
@click.option("--config", "config_file", type=click.Path(dir_okay=False),
              help="key = value file (default: $DQE_CONFIG).")
@click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE",
              help="Override any config key; repeatable.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, config_file, assignments, verbose):
    """Dissipative quantum emulator: exact Lindblad data, Laguerre features, neural emulation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config": config_file, "set": assignments}


@cli.command()
@click.option("--out", "data", help="Dataset file to write.")
@click.option("--num-pulses", type=int)
@click.option("--seed", type=int)
@click.option("--workers", type=int)
@click.pass_context
def generate(ctx, data, num_pulses, seed, workers):
    """Simulate sampled pulses and write a dataset file."""
    cfg = _resolve(ctx, data=data, num_pulses=num_pulses, seed=seed, workers=workers)
    out = Path(_require_path(cfg.data, "--out"))
    if cfg.num_pulses < 0:
        raise click.UsageError("--num-pulses must be non-negative")
    if not out.parent.is_dir():
        raise DataError(f"cannot write {out}: directory {out.parent} does not exist")
    t0 = time.perf_counter()

    def progress(i, rec):
        click.echo(f"pulse {i + 1}/{cfg.num_pulses}: {len(rec)} samples, "
                   f"A={rec.pulse.amplitude:.4g} omega={rec.pulse.omega:.4g} "
                   f"({time.perf_counter() - t0:.1f} s)", err=True)

    ds = dsmod.generate(cfg.simulation(), cfg.num_pulses, cfg.seed, cfg.workers, progress)
    try:
        dsmod.save(ds, out)
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc.strerror}") from None
    click.echo(f"wrote {len(ds)} records to {out}")


@cli.command()
@click.option("--data", help="Dataset file.")
@click.option("--out", "model", help="Model file to write; the loss log goes to <out>.loss.csv.")
@click.option("--epochs", type=int)
@click.option("--lr", type=float)
@click.option("--drop-epoch", type=int)
@click.option("--drop-factor", type=float)
@click.option("--batch", type=int)
@click.option("--test-fraction", type=float)
@click.option("--seed", type=int)
@click.pass_context
def train(ctx, data, model, epochs, lr, drop_epoch, drop_factor, batch, test_fraction, seed):
    """Train the emulator on the training split of a dataset."""
    cfg = _resolve(ctx, data=data, model=model, epochs=epochs, lr=lr, drop_epoch=drop_epoch,
                   drop_factor=drop_factor, batch=batch, test_fraction=test_fraction, seed=seed)
    data_path = _require_path(cfg.data, "--data")
    out = Path(_require_path(cfg.model, "--out"))
    if cfg.epochs < 1 or cfg.batch < 2 or not 0 < cfg.test_fraction < 1:
        raise click.UsageError("need epochs >= 1, batch >= 2 and 0 < test-fraction < 1")
    ds = dsmod.load(data_path)
    train_idx, test_idx = dsmod.split(ds, cfg.test_fraction, cfg.seed)
    click.echo(f"split: {len(train_idx)} train / {len(test_idx)} test pulses")
    stats = dsmod.fit_stats(ds, train_idx)
    x_tr, y_tr = ds.stack(train_idx)
    x_te, y_te = ds.stack(test_idx)
    arch = cfg.architecture()
    if arch.n_features != ds.config.featurizer.N:
        arch = type(arch)(n_features=ds.config.featurizer.N, width=arch.width, n_blocks=arch.n_blocks)
    net = EmulatorNet(arch, seed=cfg.seed)
    net.set_stats(stats)
    tcfg = cfg.training()

    def progress(epoch, tl, vl):
        if epoch == 0 or (epoch + 1) % 10 == 0 or epoch + 1 == tcfg.epochs:
            click.echo(f"epoch {epoch + 1}/{tcfg.epochs} lr={tcfg.lr_at(epoch):g} "
                       f"train={tl:.6g} val={vl:.6g}", err=True)

    history = train_net(net, x_tr, y_tr, x_te, y_te, tcfg, progress)
    meta = {
        "simulation": ds.config.to_dict(),
        "training": {"epochs": tcfg.epochs, "lr": tcfg.lr, "drop_epoch": tcfg.drop_epoch,
                     "drop_factor": tcfg.drop_factor, "batch_size": tcfg.batch_size, "seed": tcfg.seed},
        "dataset": {"seed": ds.seed, "records": len(ds), "path": str(data_path)},
        "train_indices": [int(i) for i in train_idx],
        "test_indices": [int(i) for i in test_idx],
        "final_train_loss": history.final_loss,
    }
    try:
        save_model(net, out, meta)
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc.strerror}") from None
    _write(out.with_name(out.name + ".loss.csv"), history.to_csv())
    click.echo(f"final train loss {history.final_loss!r}")
    click.echo(f"final val loss {history.val_loss[-1]!r}")
    click.echo(f"wrote model to {out}")


@cli.command("eval")
@click.option("--model", help="Model file.")
@click.option("--data", help="Dataset file; the model's held-out pulses are evaluated.")
@click.option("--chirped", is_flag=True, help="Evaluate the chirped out-of-distribution pulse.")
@click.option("--out-csv", "out_csv", help="Directory for trajectory and spectrum CSV files.")
@click.pass_context
def eval_(ctx, model, data, chirped, out_csv):
    """Compare emulated and exact currents."""
    cfg = _resolve(ctx, model=model, data=data, out_csv=out_csv)
    net, meta = load_model(_require_path(cfg.model, "--model"))
    if not chirped and not cfg.data:
        raise click.UsageError("give --data or --chirped")
    csv_dir = Path(cfg.out_csv) if cfg.out_csv else None
    if csv_dir is not None:
        try:
            csv_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create {csv_dir}: {exc.strerror}") from None
    results = []
    if cfg.data:
        ds = dsmod.load(cfg.data)
        same = meta.get("dataset", {})
        if same.get("seed") == ds.seed and same.get("records") == len(ds) and "test_indices" in meta:
            indices = meta["test_indices"]
        else:
            indices = list(range(len(ds)))  # a foreign dataset is entirely held out
        if not indices:
            raise DataError("no held-out pulses to evaluate")
        for i in indices:
            results.append((f"pulse_{i}", evaluate_record(net, ds.records[i])))
    if chirped:
        results.append(("chirped", chirped_generalization_test(net, _sim_from_meta(meta, cfg))))
    in_dist = [r.nrmse for name, r in results if name != "chirped"]
    for name, r in results:
        click.echo(f"{name}: nrmse={r.nrmse:.6g} harmonics_within_2x={r.harmonics_within()}")
        if csv_dir is not None:
            _write(csv_dir / f"{name}_trajectory.csv", r.trajectory_csv())
            _write(csv_dir / f"{name}_spectrum.csv", r.spectrum_csv())
    if in_dist:
        click.echo(f"in-distribution nrmse: median={np.median(in_dist):.6g} max={max(in_dist):.6g}")


@cli.command()
@click.option("--model", help="Model file.")
@click.option("--trials", type=int)
@click.option("--out-csv", "out_csv", help="CSV file for the report.")
@click.pass_context
def bench(ctx, model, trials, out_csv):
    """Time exact evolution against featurization plus emulation on a 10-cycle pulse."""
    cfg = _resolve(ctx, model=model, trials=trials, out_csv=out_csv)
    if cfg.trials < 3:
        raise click.UsageError("--trials must be at least 3")
    net, meta = load_model(_require_path(cfg.model, "--model"))
    report = benchmark(_sim_from_meta(meta, cfg), net, cfg.trials)
    click.echo(report.as_text())
    if cfg.out_csv:
        _write(Path(cfg.out_csv), report.as_csv())
    else:
        click.echo(report.as_csv(), nl=False)


@cli.command()
@click.option("--inject-sign-flip", is_flag=True, hidden=True,
              help="Flip the commutator sign in the integrator (fault-injection hook).")
@click.pass_context
def selftest(ctx, inject_sign_flip):
    """Fast invariant suite; one line per check."""
    from .selftest import run_all

    _resolve(ctx)

    if inject_sign_flip:
        with flipped_commutator_sign():
            results = run_all()
    else:
        results = run_all()
    for r in results:
        click.echo(r.line())
    failed = [r.name for r in results if not r.passed]
    click.echo("selftest: " + ("all checks passed" if not failed else f"FAILED: {', '.join(failed)}"))
    if failed:
        sys.exit(EXIT_NUMERICAL)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="dqe", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.UsageError as exc:  # click's default code for these is 2
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (ConfigError, ResourceError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except NumericalError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return EXIT_NUMERICAL
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    return EXIT_OK


def entry():
    sys.exit(main())
