"""Command-line entry point.

Subcommands: train, eval, gradcheck, export-attention, synth-data, bench.
Exit codes: 0 success, 1 check or assertion failure, 2 configuration error.
One JSON config per training run; CLI flags override config fields, and the
AINET_OUT_DIR / AINET_THREADS environment variables override output base
directory and BLAS thread count.
"""

from __future__ import annotations

import os

# Thread pinning must precede the first numpy import to reach the BLAS.
if os.environ.get("AINET_THREADS"):
    for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_v, os.environ["AINET_THREADS"])

import argparse
import hashlib
import json
import sys
import time

import numpy as np

from . import ail, data, nets, ops, tensor, train
from .autodiff import Parameter, finite_diff_check, write_gradcheck_csv
from .errors import (
    AinetError,
    BuildError,
    ConfigurationError,
    ContractError,
    FormatError,
)

# Seed-stream offsets: one base seed per run, fixed offsets per component,
# so adding a consumer never perturbs the others.
STREAM_INIT = 0  # network initialization (epochs use offsets 1..N)
STREAM_GRADCHECK = 977


def _req(cfg: dict, key: str, ctx: str = ""):
    if key not in cfg:
        raise ConfigurationError(f"missing config field {ctx}{key}")
    return cfg[key]


def _exists(path: str, field: str) -> str:
    if not os.path.exists(path):
        raise ConfigurationError(f"config field {field}: path {path!r} does not exist")
    return path


def _split_stratified(samples, fraction: float):
    """Per-class prefix split; fraction >= 1 evaluates on the training set."""
    if fraction >= 1.0:
        return samples, samples
    by_label: dict[int, list] = {}
    for s in samples:
        by_label.setdefault(s.label, []).append(s)
    tr, ev = [], []
    for label in sorted(by_label):
        group = by_label[label]
        k = int(round(len(group) * fraction))
        tr.extend(group[:k])
        ev.extend(group[k:])
    return tr, ev


def _load_datasets(dcfg: dict, seed: int):
    kind = _req(dcfg, "kind", "dataset.")
    if kind == "batches":
        path = _exists(_req(dcfg, "path", "dataset."), "dataset.path")
        return data.load_cifar10(
            path, dcfg.get("max_train"), dcfg.get("max_test")
        )
    if kind == "varsize":
        n = int(dcfg.get("n", 2000))
        num_classes = int(dcfg.get("num_classes", 4))
        samples = data.synth_varsize(int(dcfg.get("seed", seed)), n, num_classes)
        wrap = dcfg.get("wrap")
        if wrap:
            samples = [data.resize_wrap(s, int(wrap)) for s in samples]
        return _split_stratified(samples, float(dcfg.get("split", 0.8)))
    if kind == "frames":
        path = _exists(_req(dcfg, "path", "dataset."), "dataset.path")
        samples, _ = data.load_feature_frames(path)
        return _split_stratified(samples, float(dcfg.get("split", 0.8)))
    if kind == "frames-synth":
        samples = data.synth_feature_frames(
            int(dcfg.get("seed", seed)),
            per_class=int(dcfg.get("per_class", 10)),
            num_classes=int(dcfg.get("num_classes", 30)),
        )
        return _split_stratified(samples, float(dcfg.get("split", 0.8)))
    if kind == "dir":
        path = _exists(_req(dcfg, "path", "dataset."), "dataset.path")
        return _split_stratified(data.load_dataset(path), float(dcfg.get("split", 0.8)))
    raise ConfigurationError(f"dataset.kind {kind!r} is not one of "
                             "batches/varsize/frames/frames-synth/dir")


def _network_spec(ncfg: dict) -> nets.NetworkSpec:
    if "spec_file" in ncfg:
        return nets.load_spec(_exists(ncfg["spec_file"], "network.spec_file"))
    if "spec" in ncfg:
        return nets.NetworkSpec.from_dict(ncfg["spec"])
    name = _req(ncfg, "preset", "network.")
    return nets.preset(
        name,
        num_classes=ncfg.get("num_classes"),
        transition=ncfg.get("transition", "ail"),
        grad_mode=ncfg.get("grad_mode", ail.GRAD_ANALYTIC),
    )


def _optimizer_config(ocfg: dict):
    kind = str(ocfg.get("kind", "sgd")).lower()
    fields = {k: v for k, v in ocfg.items() if k != "kind"}
    try:
        if kind == "sgd":
            return train.SgdConfig(**fields)
        if kind == "adam":
            return train.AdamConfig(**fields)
    except TypeError as e:
        raise ConfigurationError(f"optimizer: {e}") from e
    raise ConfigurationError(f"optimizer.kind {kind!r} is not sgd or adam")


def _schedule(scfg: dict | None):
    if not scfg:
        return None
    kind = str(_req(scfg, "kind", "schedule.")).lower()
    try:
        if kind == "step":
            return train.StepAt(list(_req(scfg, "epochs", "schedule.")),
                                float(scfg.get("factor", 0.1)))
        if kind == "plateau":
            return train.Plateau(int(scfg.get("patience", 5)),
                                 float(scfg.get("factor", 10 ** -0.5)),
                                 float(scfg.get("threshold", 1e-6)))
    except TypeError as e:
        raise ConfigurationError(f"schedule: {e}") from e
    raise ConfigurationError(f"schedule.kind {kind!r} is not step or plateau")


def _run_dir(base: str, cfg: dict) -> str:
    digest = hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()
    ).hexdigest()[:8]
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = os.path.join(base, f"{digest}-{stamp}")
    suffix = 0
    while os.path.exists(path):
        suffix += 1
        path = os.path.join(base, f"{digest}-{stamp}-{suffix}")
    os.makedirs(path)
    return path


def cmd_train(args) -> int:
    with open(_exists(args.config, "--config")) as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config {args.config}: invalid JSON: {e}") from e
    seed = int(cfg.get("seed", 0))
    epochs = int(args.epochs if args.epochs is not None else cfg.get("epochs", 1))
    batch = int(cfg.get("batch_size", 64))
    out_base = args.out or os.environ.get("AINET_OUT_DIR") or cfg.get("out_dir", "runs")

    train_set, eval_set = _load_datasets(_req(cfg, "dataset", ""), seed)
    spec = _network_spec(_req(cfg, "network", ""))
    top = max(s.label for s in train_set + eval_set)
    if top >= spec.num_classes:
        raise ConfigurationError(
            f"network.num_classes = {spec.num_classes} but the dataset has label {top}"
        )
    net = nets.build(spec, rng=np.random.default_rng([seed, STREAM_INIT]))
    start_epoch = 1
    if args.resume:
        loaded, extra = nets.load_checkpoint(_exists(args.resume, "--resume"))
        if loaded.spec.to_dict() != spec.to_dict():
            raise ConfigurationError("--resume checkpoint was built from a different spec")
        net = loaded
        start_epoch = int(extra.get("epoch", 0)) + 1

    optimizer = train.make_optimizer(net.parameters(), _optimizer_config(cfg.get("optimizer", {})))
    schedule = _schedule(cfg.get("schedule"))
    run_dir = _run_dir(out_base, cfg)
    with open(os.path.join(run_dir, "config.json"), "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)

    print(f"run dir: {run_dir}")
    print(f"network {spec.name}: {net.parameter_count()} parameters; "
          f"{len(train_set)} train / {len(eval_set)} eval samples")
    rows = []
    if start_epoch > epochs:
        print("nothing to do: checkpoint is at or past the requested epochs")
    for epoch in range(start_epoch, epochs + 1):
        t0 = time.monotonic()
        rng = np.random.default_rng([seed, epoch])
        buckets = data.bucket_batches(train_set, batch, rng=rng)
        tl = train.train_epoch(net, train_set, buckets, optimizer, batch, rng=rng,
                               use_augment=bool(cfg.get("dataset", {}).get("augment", False)))
        ev = train.evaluate(net, eval_set)
        if schedule is not None:
            optimizer.lr = schedule.update(optimizer.lr, epoch, ev["loss"])
        rows.append(train.RunMetrics(epoch, tl, ev["loss"], ev["error"], optimizer.lr,
                                     time.monotonic() - t0))
        train.write_metrics_csv(os.path.join(run_dir, "metrics.csv"), rows)
        print(f"epoch {epoch:3d}  train {tl:.4f}  eval {ev['loss']:.4f}  "
              f"err {ev['error']:.3f}  lr {optimizer.lr:.5f}  {rows[-1].seconds:.1f}s")
        every = int(cfg.get("checkpoint_every", 0))
        extra = {"epoch": epoch, "eval_loss": ev["loss"], "error": ev["error"]}
        if every and epoch % every == 0:
            nets.save_checkpoint(net, os.path.join(run_dir, f"checkpoint-epoch{epoch:03d}"), extra)
    nets.save_checkpoint(net, os.path.join(run_dir, "checkpoint-final"),
                         {"epoch": epochs, "eval_loss": rows[-1].eval_loss if rows else None,
                          "error": rows[-1].error if rows else None})
    if rows:
        print(f"final eval error {rows[-1].error:.3f}")
    return 0


def cmd_eval(args) -> int:
    net, _ = nets.load_checkpoint(_exists(args.checkpoint, "--checkpoint"))
    if args.dataset_kind == "batches":
        # standardization statistics come from the train subset
        _, samples = data.load_cifar10(_exists(args.data, "--data"),
                                       max_test=args.max_samples)
    else:
        dcfg = {"kind": args.dataset_kind, "path": args.data, "split": 1.0}
        samples, _ = _load_datasets(dcfg, seed=0)
        if args.max_samples:
            samples = samples[: args.max_samples]
    ev = train.evaluate(net, samples)
    print(f"samples {len(samples)}  loss {ev['loss']:.4f}  error {ev['error']:.4f}")
    return 0


# gradcheck: every op kind in isolation, then a composed network. All in
# extended precision with biases drawn away from the relu kink at exactly 0.


def _rand_params(net_or_params, rng, bias_scale=0.25):
    """Redraw parameters for a check: biases move off the relu kink at 0,
    weights keep their fan-in scale so activations stay well conditioned."""
    params = net_or_params.parameters() if hasattr(net_or_params, "parameters") else net_or_params
    for p in params:
        if p.name.endswith(".gamma"):
            p.value[:] = 1.0 + 0.25 * rng.normal(size=p.value.shape)
        elif p.name.endswith((".bias", ".beta")):
            p.value[:] = bias_scale * rng.normal(size=p.value.shape)
        else:
            scale = float(p.value.std()) or 0.3  # zero-init classifiers get a real scale
            p.value[:] = scale * rng.normal(size=p.value.shape)
    return params


def _gradcheck_suite(seed: int, tol: float):
    """Returns (reports: dict name -> GradCheckReport, heuristic: dict)."""
    rng = np.random.default_rng([seed, STREAM_GRADCHECK])
    F = np.float64
    reports = {}
    heuristic = {}

    def loss_through(y, coef):
        return ops.sum_all(ops.mul(y, ops.as_node(coef)))

    # plain convs
    x = Parameter(rng.normal(size=(2, 6, 7, 3)), "x")
    conv = ops.init_conv((3, 3, 3, 4), "conv2d", rng, stride=2, dtype=F)
    _rand_params(conv.parameters(), rng)
    coef = rng.normal(size=(2, 3, 4, 4))
    reports["conv2d"] = finite_diff_check(
        lambda: loss_through(ops.conv2d(x, conv), coef), [x, *conv.parameters()], tol=tol
    )
    x1 = Parameter(rng.normal(size=(2, 9, 3)), "x")
    conv1 = ops.init_conv((5, 3, 4), "conv1d", rng, stride=2, dtype=F)
    _rand_params(conv1.parameters(), rng)
    coef1 = rng.normal(size=(2, 5, 4))
    reports["conv1d"] = finite_diff_check(
        lambda: loss_through(ops.conv1d(x1, conv1), coef1), [x1, *conv1.parameters()], tol=tol
    )

    # pooling
    xp = Parameter(rng.normal(size=(2, 5, 5, 3)), "x")
    coefp = rng.normal(size=(2, 3, 3, 3))
    reports["maxpool2d"] = finite_diff_check(
        lambda: loss_through(ops.maxpool2d(xp, 2, 2, ceil_mode=True), coefp), [xp], tol=tol
    )
    xp1 = Parameter(rng.normal(size=(2, 7, 3)), "x")
    coefp1 = rng.normal(size=(2, 4, 3))
    reports["maxpool1d"] = finite_diff_check(
        lambda: loss_through(ops.maxpool1d(xp1, 2, 2, ceil_mode=True), coefp1), [xp1], tol=tol
    )

    # batchnorm, training stats and eval stats
    xb = Parameter(rng.normal(size=(3, 4, 4, 2)), "x")
    gamma = Parameter(1.0 + 0.25 * rng.normal(size=2), "bn.gamma")
    beta = Parameter(0.25 * rng.normal(size=2), "bn.beta")
    st = ops.BatchNormState.for_channels(2, dtype=F)
    coefb = rng.normal(size=(3, 4, 4, 2))
    reports["batchnorm_train"] = finite_diff_check(
        lambda: loss_through(ops.batchnorm(xb, gamma, beta, st, training=True), coefb),
        [xb, gamma, beta], tol=tol,
    )
    reports["batchnorm_eval"] = finite_diff_check(
        lambda: loss_through(ops.batchnorm(xb, gamma, beta, st, training=False), coefb),
        [xb, gamma, beta], tol=tol,
    )

    # classifier head with cross entropy
    xl = Parameter(rng.normal(size=(4, 6)), "x")
    wl = Parameter(0.4 * rng.normal(size=(6, 5)), "fc.weights")
    bl = Parameter(0.25 * rng.normal(size=5), "fc.bias")
    labels = rng.integers(0, 5, size=4)
    reports["linear_xent"] = finite_diff_check(
        lambda: ops.cross_entropy_sum(ops.linear(xl, wl, bl), labels), [xl, wl, bl], tol=tol
    )

    # attention pooling layers, content and attention paths through both convs
    cfgs = {
        "lail2d": ail.AilConfig(ail.Local(3, 3), 2, 3, stride=2),
        "gail2d": ail.AilConfig(ail.Global(), 2, 3),
        "lail1d": ail.AilConfig(ail.Local(3), 2, 3, stride=2, ndim=1),
        "gail1d": ail.AilConfig(ail.Global(), 2, 3, ndim=1),
    }
    for name, cfg in cfgs.items():
        prm = ail.init_ail_params(cfg, name, rng, dtype=F)
        _rand_params(prm.parameters(), rng)
        shape = (2, 6, 6, 2) if cfg.ndim == 2 else (2, 7, 2)
        xa = Parameter(rng.normal(size=shape), "x")
        ya = ail.ail_forward(xa, cfg, prm)
        coefa = rng.normal(size=ya.value.shape)
        reports[name] = finite_diff_check(
            lambda cfg=cfg, prm=prm, xa=xa, coefa=coefa: loss_through(
                ail.ail_forward(xa, cfg, prm), coefa
            ),
            [xa, *prm.parameters()], tol=tol,
        )
        if name == "lail2d":  # squared-denominator mode, measured not gated
            hcfg = ail.AilConfig(ail.Local(3, 3), 2, 3, stride=2,
                                 grad_mode=ail.GRAD_HEURISTIC)
            heuristic[name] = finite_diff_check(
                lambda: loss_through(ail.ail_forward(xa, hcfg, prm), coefa),
                [xa, *prm.parameters()], tol=tol,
            )

    # dense block with attention head
    dspec = nets.LayerSpec("DenseBlock", repetitions=2, growth=4)
    dnet = nets.build(
        nets.NetworkSpec("db", [dspec, nets.LayerSpec("Gail", channels=4),
                                nets.LayerSpec("Classifier")], 3, 6),
        rng=rng, dtype=F,
    )
    _rand_params(dnet, rng)
    xd = Parameter(rng.normal(size=(2, 5, 5, 6)), "x")
    labd = rng.integers(0, 3, size=2)
    reports["dense_gail_net"] = finite_diff_check(
        lambda: ops.cross_entropy_sum(dnet.forward(xd, training=True), labd),
        [xd, *dnet.parameters()], tol=tol, max_coords_per_param=6,
    )

    # composed stack: conv stem, two local attention transitions, global head
    cspec = nets.NetworkSpec(
        "composed",
        [nets.LayerSpec("Conv2d", channels=4, kernel=3),
         nets.LayerSpec("Lail", channels=4, kernel=3, stride=2),
         nets.LayerSpec("Lail", channels=6, kernel=3, stride=2),
         nets.LayerSpec("Gail", channels=6),
         nets.LayerSpec("Classifier")],
        num_classes=4, in_channels=3,
    )
    cnet = nets.build(cspec, rng=rng, dtype=F)
    _rand_params(cnet, rng)
    xc = Parameter(rng.normal(size=(2, 10, 9, 3)), "x")
    labc = rng.integers(0, 4, size=2)
    reports["composed_lail_gail"] = finite_diff_check(
        lambda: ops.cross_entropy_sum(cnet.forward(xc, training=True), labc),
        [xc, *cnet.parameters()], tol=tol, max_coords_per_param=4,
    )

    # the full small preset, sampled coordinates
    tnet = nets.build(nets.preset("ain-tiny", num_classes=5), rng=rng, dtype=F)
    _rand_params(tnet, rng)
    xt = Parameter(rng.normal(size=(2, 8, 8, 3)), "x")
    labt = rng.integers(0, 5, size=2)
    reports["ain_tiny"] = finite_diff_check(
        lambda: ops.cross_entropy_sum(tnet.forward(xt, training=True), labt),
        [xt, *tnet.parameters()], tol=tol, max_coords_per_param=3,
    )
    return reports, heuristic


def cmd_gradcheck(args) -> int:
    t0 = time.monotonic()
    all_reports = {}
    failures = []
    worst = 0.0
    heur_max = 0.0
    heur_example = None
    for i in range(args.seeds):
        seed = args.seed + i
        reports, heuristic = _gradcheck_suite(seed, args.tol)
        for name, rep in reports.items():
            all_reports[f"s{seed}.{name}"] = rep
            worst = max(worst, rep.max_rel_err)
            if not rep.passed:
                failures.append((seed, name, rep.max_rel_err, rep.failure))
        for name, rep in heuristic.items():
            all_reports[f"s{seed}.{name}_heuristic"] = rep
            if rep.max_rel_err > heur_max:
                heur_max = rep.max_rel_err
                heur_example = (seed, name, rep.max_rel_err,
                                reports[name].max_rel_err)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "gradcheck.csv")
        write_gradcheck_csv(path, all_reports)
        print(f"report: {path}")
    n_analytic = sum(1 for k in all_reports if not k.endswith("_heuristic"))
    print(f"analytic checks: {n_analytic} over {args.seeds} seeds, "
          f"max rel err {worst:.3g}, tol {args.tol:g}, "
          f"{time.monotonic() - t0:.1f}s")
    if heur_example:
        s, name, h, a = heur_example
        print(f"squared-denominator attention gradient (seed {s}, {name}): "
              f"max rel err {h:.3g} vs {a:.3g} analytic; "
              f"reported only, never gates the exit code")
    if failures:
        for seed, name, err, detail in failures[:10]:
            print(f"FAIL seed {seed} {name}: max rel err {err:.3g}"
                  + (f" ({detail})" if detail else ""))
        return 1
    print("all analytic gradients match finite differences")
    return 0


def _write_pgm(path: str, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ContractError(f"PGM wants a 2-D array, got {img.shape}")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def _nearest_upscale(m: np.ndarray, H: int, W: int) -> np.ndarray:
    yy = (np.arange(H) * m.shape[0]) // H
    xx = (np.arange(W) * m.shape[1]) // W
    return m[yy][:, xx]


def _load_image_any(path: str, ndim: int) -> np.ndarray:
    if path.endswith(".aint"):
        arr = tensor.load_tensor(path)
    elif path.endswith(".bin"):
        with open(path, "rb") as f:
            _, img = data.decode_record(f.read(data.RECORD_BYTES))
        arr = img.astype(np.float32) / 255.0
    else:
        raise ConfigurationError(f"--image {path!r}: expected a .aint tensor or .bin batch file")
    if ndim == 2 and arr.ndim == 2:
        arr = arr[:, :, None]  # grayscale
    if arr.ndim != ndim + 1:
        raise ConfigurationError(
            f"--image {path!r}: rank {arr.ndim} array does not fit a {ndim}-D network"
        )
    return arr.astype(np.float32)


def cmd_export_attention(args) -> int:
    net, _ = nets.load_checkpoint(_exists(args.checkpoint, "--checkpoint"))
    img = _load_image_any(_exists(args.image, "--image"), net.ndim)
    collect: list[np.ndarray] = []
    net.forward(img, training=False, collect=collect)
    if not collect:
        print("checkpointed network has no attention layers to export", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    # 1-D inputs render as a time-by-feature strip, maps stretched to match.
    H, W = img.shape[0], img.shape[1]
    lum = img.mean(axis=-1) if net.ndim == 2 else img
    lo, hi = float(lum.min()), float(lum.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    _write_pgm(os.path.join(args.out, "input.pgm"),
               np.round((lum - lo) * scale).astype(np.uint8))
    for i, wmap in enumerate(collect):
        m = wmap[0] if wmap.shape[0] == 1 and wmap.ndim == net.ndim + 1 else wmap
        if m.ndim == 1:
            m = m[:, None]
        up = _nearest_upscale(np.round(m * 255.0).astype(np.uint8), H, W)
        out_path = os.path.join(args.out, f"attention_{i:02d}.pgm")
        _write_pgm(out_path, up)
        print(f"wrote {out_path} (map {tuple(wmap.shape)} -> {tuple(up.shape)})")
    return 0


def cmd_synth_data(args) -> int:
    if args.kind == "varsize":
        samples = data.synth_varsize(args.seed, args.n, args.num_classes)
        data.save_dataset(samples, args.out)
    elif args.kind == "batches":
        n_test = args.n_test if args.n_test is not None else max(args.n // 5, 1)
        data.synth_image_batches(args.out, args.seed, args.n, n_test,
                                 num_classes=args.num_classes)
    elif args.kind == "frames":
        per = max(args.n // args.num_classes, 1)
        samples = data.synth_feature_frames(args.seed, per, args.num_classes)
        data.write_feature_frames_csv(samples, args.out)
    else:
        raise ConfigurationError(f"--kind {args.kind!r} is not varsize/batches/frames")
    print(f"wrote {args.kind} dataset under {args.out}")
    return 0


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if not sizes:
        raise ConfigurationError("--sizes must list at least one extent")
    c = args.channels
    rng = np.random.default_rng(args.seed)
    rows = [("size", "kind", "params", "median_ms")]
    for size in sizes:
        x = rng.normal(size=(1, size, size, c)).astype(tensor.STANDARD)
        layers = {}
        for kind in nets.TRANSITION_KINDS:
            spec = nets.NetworkSpec(
                f"bench-{kind}",
                [nets._transition_maker(kind, ail.GRAD_ANALYTIC)(c),
                 nets.LayerSpec("Gail", channels=4), nets.LayerSpec("Classifier")],
                num_classes=2, in_channels=c,
            )
            layers[kind] = nets.build(spec, rng=np.random.default_rng(0)).layers[0]
        shapes = {k: tuple(l.forward(ops.as_node(x), False, None).value.shape)
                  for k, l in layers.items()}
        if len(set(shapes.values())) != 1:
            print(f"transition output shapes diverge at {size}: {shapes}", file=sys.stderr)
            return 1
        for kind, layer in layers.items():
            times = []
            for _ in range(args.repeats):
                t0 = time.perf_counter()
                layer.forward(ops.as_node(x), False, None)
                times.append((time.perf_counter() - t0) * 1e3)
            params = sum(p.value.size for p in layer.parameters())
            rows.append((size, kind, params, f"{float(np.median(times)):.3f}"))
    out_path = args.out or "bench.csv"
    with open(out_path, "w") as f:
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")
    for row in rows:
        print(*row, sep="\t")
    print(f"wrote {out_path}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ainet",
                                description="attention-incorporate pooling network kit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--epochs", type=int, default=None, help="override config epochs")
    t.add_argument("--out", default=None, help="override output base directory")
    t.add_argument("--resume", default=None, metavar="CHECKPOINT",
                   help="load this checkpoint and continue from its epoch")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset-kind", default="dir",
                   choices=["batches", "varsize", "frames", "dir"])
    e.add_argument("--data", required=True)
    e.add_argument("--max-samples", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every layer kind")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--seeds", type=int, default=10, help="number of consecutive seeds")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--out", default=None, help="directory for gradcheck.csv")
    g.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("export-attention", help="write attention maps as PGM files")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--image", required=True, help=".aint tensor or .bin batch file")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_attention)

    s = sub.add_parser("synth-data", help="generate a synthetic dataset")
    s.add_argument("--kind", required=True, choices=["varsize", "batches", "frames"])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--n-test", type=int, default=None)
    s.add_argument("--num-classes", type=int, default=4)
    s.set_defaults(func=cmd_synth_data)

    b = sub.add_parser("bench", help="time the three transition kinds")
    b.add_argument("--sizes", default="16,32,64")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--channels", type=int, default=64)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="CSV report path (default bench.csv)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, BuildError, FormatError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except AinetError as e:
        print(f"run failed: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
