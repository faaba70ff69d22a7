"""Command line entry point: ``pbitnqs {exact,embed,train,sample,serve}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import chimera, config, link, pbit, plotting, rbm, tfim, vmc

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PROTOCOL = 0, 1, 2, 3

log = logging.getLogger("pbitnqs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dims(text):
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected M,N,L, got {text!r}") from None
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"expected M,N,L, got {text!r}")
    return dims


def cmd_exact(args) -> int:
    if not args.pbc:
        raise UsageError("only the periodic chain is supported; pass --pbc")
    if args.n > tfim.MAX_SPINS:
        raise UsageError(f"--n {args.n} exceeds the exact-diagonalization limit of {tfim.MAX_SPINS}")
    model = tfim.TfimModel.uniform(args.n, args.j, args.gamma)
    res = tfim.exact_ground_energy(model, keep_vector=False)
    text = res.report()
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text)
    return EXIT_OK


def cmd_embed(args) -> int:
    topo = chimera.build_chimera(*args.chimera)
    try:
        emb = chimera.embed_bipartite(args.nv, args.nh, topo)
    except chimera.CapacityError as exc:
        raise UsageError(f"capacity error: {exc}") from None
    Path(args.out).write_text(emb.to_text())
    lengths = {}
    for k, c in enumerate(emb.chains):
        kind = "visible" if k < emb.nv else "hidden"
        lengths.setdefault(kind, len(c))
    intra = len(topo.intra_couplers)
    used = len(emb.edge_map)
    print(f"{emb.n_pbits} p-bits, chains {emb.nv}×len{lengths['visible']} + "
          f"{emb.nh}×len{lengths['hidden']}")
    print(f"chimera {topo.M},{topo.N},{topo.L}: {topo.n_nodes} p-bits, {len(topo.couplers)} couplers")
    print(f"logical couplers: {used} on {intra} intra-cell couplers; "
          f"chain couplers: {len(emb.chain_couplers())}")
    print(f"embedding written to {args.out}")
    return EXIT_OK


def _versions():
    out = {"python": platform.python_version(), "numpy": np.__version__}
    try:
        out["pbitnqs"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["pbitnqs"] = "unknown"
    return out


def cmd_train(args) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        values = dict(manifest["config"])
        unknown = set(values) - {f for f in vmc.TrainConfig.__dataclass_fields__}
        if unknown:
            raise config.ConfigError(f"manifest has unknown keys: {', '.join(sorted(unknown))}")
        cfg = config.build_config(None, values)
        timing = manifest.get("timing", True)
    else:
        values = {}
        if args.config:
            values.update(config.read_config_file(args.config))
        flags = {"sampler": args.sampler, "mode": args.mode, "epochs": args.epochs,
                 "seed": args.seed, "learning_rate": args.learning_rate,
                 "chain_strength": args.chain_strength, "endpoint": args.endpoint,
                 "samples_per_epoch": args.samples, "chimera": args.chimera}
        values.update({k: v for k, v in flags.items() if v is not None})
        values.update(config.parse_assignments(
            ((i, s) for i, s in enumerate(args.set or [], 1)), "--set"))
        cfg = config.build_config(args.preset, values)
        timing = not args.no_timing

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"manifest": out / "manifest.json", "history": out / "history.csv",
             "checkpoint": out / "params.rbm", "plot": out / "convergence.svg"}
    manifest = {"config": cfg.to_dict(), "seed": cfg.seed, "timing": timing,
                "versions": _versions(),
                "outputs": {k: str(v) for k, v in paths.items() if k != "plot" or not args.no_plot}}
    paths["manifest"].write_text(json.dumps(manifest, indent=2, default=list) + "\n")

    exact_e = None
    if cfg.n_spins <= tfim.MAX_SPINS:
        exact_e = tfim.exact_ground_energy(cfg.model, keep_vector=False).ground_energy

    def progress(rec, _params):
        if rec.epoch % max(1, args.log_every) == 0:
            log.info("epoch %d  E=%.5f ± %.5f  |g|=%.4f", rec.epoch, rec.energy_mean,
                     rec.energy_stderr, rec.grad_norm)

    if cfg.epochs == 0:
        params = rbm.RbmParams.random(cfg.n_spins, cfg.alpha, cfg.init_std, seed=cfg.seed)
        result = vmc.TrainResult(vmc.TrainHistory(), params, params.copy())
        failure = None
    else:
        failure = None
        try:
            result = vmc.train(cfg, callback=progress, checkpoint_path=paths["checkpoint"])
        except vmc.TrainingError as exc:
            failure = exc
            result = None
    if result is not None:
        with open(paths["history"], "w", newline="") as f:
            result.history.write_csv(f, timing=timing)
        rbm.save_checkpoint(paths["checkpoint"], result.params)
        if not args.no_plot:
            plotting.plot_convergence(result.history, paths["plot"], exact_e, cfg.window,
                                      title=f"{cfg.sampler} / {cfg.mode}")
    if failure is not None:
        cause = failure.__cause__
        if isinstance(cause, (link.ProtocolError, link.TransportError)):
            print(f"error: {failure}", file=sys.stderr)
            return EXIT_PROTOCOL
        raise failure

    print(f"epochs run: {len(result.history)}")
    if len(result.history):
        last = result.history.records[-1]
        print(f"final sampled energy: {last.energy_mean:.6f} ± {last.energy_stderr:.6f}")
    if cfg.n_spins <= tfim.MAX_SPINS:
        ve = result.variational_energy(cfg)
        print(f"final variational energy: {ve:.6f}")
        print(f"exact ground energy: {exact_e:.6f}  (rel. error {abs(ve - exact_e) / abs(exact_e):.3%})")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    try:
        text = Path(args.network).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read network file: {exc}") from None
    try:
        net = pbit.network_from_text(text)
    except ValueError as exc:
        raise UsageError(f"{args.network}: {exc}") from None
    batch = pbit.sample(net, args.samples, args.sweeps, args.burn_in, args.seed,
                        update=args.update, activation=args.activation)
    Path(args.out).write_bytes(link.encode_samples(batch))
    means = batch.rows.mean(axis=0)
    print(f"{len(batch)} samples of {net.n} p-bits written to {args.out}")
    print("per-bit mean: " + " ".join(f"{m:+.3f}" for m in means[:16])
          + (" ..." if net.n > 16 else ""))
    return EXIT_OK


def cmd_serve(args) -> int:
    port = args.port if args.port is not None else int(os.environ.get(link.PORT_ENV, link.DEFAULT_PORT))
    server = link.serve(f"{args.host}:{port}")
    print(f"serving p-bit sampler on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pbitnqs", description="p-bit neural quantum state toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("exact", help="exact ground energy of the periodic TFIM chain")
    s.add_argument("--n", type=int, default=12)
    s.add_argument("--j", type=float, default=1.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--pbc", action="store_true", default=True)
    s.add_argument("--obc", dest="pbc", action="store_false", help="not supported")
    s.add_argument("--report", default="exact_report.txt")
    s.set_defaults(func=cmd_exact)

    s = sub.add_parser("embed", help="embed K(nv,nh) on a Chimera graph")
    s.add_argument("--nv", type=int, default=12)
    s.add_argument("--nh", type=int, default=48)
    s.add_argument("--chimera", type=_dims, default=(12, 3, 4), metavar="M,N,L")
    s.add_argument("--out", default="embedding.txt")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("train", help="hybrid VMC training")
    s.add_argument("--preset", choices=sorted(config.PRESETS))
    s.add_argument("--config", help="key = value config file")
    s.add_argument("--manifest", help="re-run exactly from a manifest.json")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    s.add_argument("--sampler", choices=["exact-enum", *vmc.SAMPLERS])
    s.add_argument("--mode", choices=list(rbm.SAMPLING_MODES))
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--chain-strength", type=float)
    s.add_argument("--samples", type=int)
    s.add_argument("--chimera", type=_dims, metavar="M,N,L")
    s.add_argument("--endpoint", help="host:port of a sampler server")
    s.add_argument("--out", default="run")
    s.add_argument("--no-plot", action="store_true")
    s.add_argument("--no-timing", action="store_true", help="write 0 in the wall-clock columns")
    s.add_argument("--log-every", type=int, default=50)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="sample a network file to the bit-packed format")
    s.add_argument("--network", required=True)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--sweeps", type=int, default=1)
    s.add_argument("--burn-in", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--update", choices=list(pbit.UPDATE_MODES), default="sequential")
    s.add_argument("--activation", choices=list(pbit.ACTIVATIONS), default="tanh")
    s.add_argument("--out", default="samples.bin")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("serve", help="run the sampler server")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, help=f"defaults to ${link.PORT_ENV} or {link.DEFAULT_PORT}")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "sampler", None) == "exact-enum":
        args.sampler = "exact-enumeration"
    try:
        return args.func(args)
    except (UsageError, config.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (link.ProtocolError, link.TransportError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (vmc.TrainingError, FloatingPointError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
