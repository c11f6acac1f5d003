"""Command-line orchestration: experiment configs, CSV emission, validators.

Every subcommand writes one CSV whose first line embeds the full
flattened configuration, plus a human-readable summary on stdout. Exit
codes: 0 success, 1 validation failure, 2 configuration error. With a
fixed config and seed the CSV bytes are reproducible in deterministic
mode (wall-clock columns excepted).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .dynamics import (
    CoupledSystemConfig,
    FlowConfig,
    ReactionPotential,
    check_exponential_decay,
    run_flow,
    simulate_coupled_heads,
    zero_coupling,
)
from .fields import BoundaryMode, StencilSpec, diffusion_step, dirichlet_energy, laplacian_matrix
from .layer import DiffusionLayerParams, grad_check, params_to_text
from .spectral import dct_basis, eigenvalues, fit_multiscale_weights, heat_kernel

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

_FLOAT_FMT = "%.12g"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Arg:
    type: type
    default: object
    help: str


@dataclass
class ExperimentConfig:
    """A subcommand name plus its canonicalized key=value parameters."""

    subcommand: str
    params: dict = dc_field(default_factory=dict)

    def get(self, key: str):
        schema = SCHEMAS[self.subcommand]
        raw = self.params[key]
        return _parse_value(schema[key].type, raw)

    def header(self) -> str:
        items = " ".join(f"{k}={self.params[k]}" for k in sorted(self.params))
        return f"# config: subcommand={self.subcommand} {items}".rstrip()


def _canon(typ: type, value) -> str:
    if typ is bool:
        return "true" if value else "false"
    if typ is float:
        return repr(float(value))
    return str(value)


def _parse_value(typ: type, raw: str):
    if typ is bool:
        if raw not in ("true", "false"):
            raise ConfigError(f"expected true/false, got {raw!r}")
        return raw == "true"
    return typ(raw)


def parse_config_header(line: str) -> ExperimentConfig:
    """Invert ExperimentConfig.header (round-trip contract)."""
    prefix = "# config: "
    if not line.startswith(prefix):
        raise ConfigError(f"not a config header: {line!r}")
    kv = {}
    for item in line[len(prefix):].split():
        key, _, value = item.partition("=")
        kv[key] = value
    sub = kv.pop("subcommand", None)
    if sub is None or sub not in SCHEMAS:
        raise ConfigError(f"header missing or unknown subcommand: {sub!r}")
    unknown = set(kv) - set(SCHEMAS[sub])
    if unknown:
        raise ConfigError(f"unknown keys in header: {sorted(unknown)}")
    return ExperimentConfig(subcommand=sub, params=kv)


def build_config(subcommand: str, overrides: dict) -> ExperimentConfig:
    schema = SCHEMAS[subcommand]
    unknown = set(overrides) - set(schema)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} for subcommand {subcommand!r}")
    params = {}
    for key, arg in schema.items():
        if key in overrides and overrides[key] is not None:
            value = overrides[key]
            if isinstance(value, str):
                value = _parse_value(arg.type, value)
            params[key] = _canon(arg.type, value)
        else:
            params[key] = _canon(arg.type, arg.default)
    return ExperimentConfig(subcommand=subcommand, params=params)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return _FLOAT_FMT % value
    return str(value)


def write_csv(path: str | Path, config: ExperimentConfig, columns: list[str], rows: list[tuple]) -> None:
    lines = [config.header(), ",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


# ---------------------------------------------------------------- subcommands

def _cmd_spectrum(cfg: ExperimentConfig) -> int:
    L = cfg.get("L")
    closed = eigenvalues(L)
    dense = np.sort(np.linalg.eigvalsh(laplacian_matrix(L)))[::-1]
    diffs = np.abs(np.sort(closed) - np.sort(dense))
    basis = dct_basis(L)
    resid = np.abs(laplacian_matrix(L) @ basis - basis * closed).max()
    rows = [(k, closed[k], dense[k], abs(closed[k] - dense[k])) for k in range(L)]
    write_csv(cfg.params["out"], cfg, ["k", "lambda_closed", "lambda_dense", "abs_diff"], rows)
    ok = diffs.max() < cfg.get("tol") and resid < 1e-8
    print(f"spectrum: L={L} max_eig_diff={diffs.max():.3e} basis_residual={resid:.3e} "
          f"-> {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_stability(cfg: ExperimentConfig) -> int:
    L, d, trials, steps = cfg.get("L"), cfg.get("d"), cfg.get("trials"), cfg.get("steps")
    alpha, seed = cfg.get("alpha"), cfg.get("seed")
    rng = np.random.default_rng(seed)
    stencil = StencilSpec(1)
    rows = []
    violations = 0
    for trial in range(trials):
        x = rng.standard_normal((L, d))
        e0 = dirichlet_energy(x)
        e_prev, worst = e0, 0.0
        for _ in range(steps):
            x = diffusion_step(x, alpha, stencil)
            e = dirichlet_energy(x)
            rel = (e - e_prev) / max(e_prev, 1e-14 * max(e0, 1e-300))
            worst = max(worst, rel)
            e_prev = e
        bad = worst > 1e-10
        violations += bad
        rows.append(("stable", trial, e0, e_prev, worst, int(bad)))
    # sharpness: above the threshold the highest mode must blow up fast
    mode = dct_basis(L)[:, L - 1][:, None]
    x, grew = mode.copy(), False
    e_prev = dirichlet_energy(x)
    for step in range(10):
        x = diffusion_step(x, cfg.get("unstable_alpha"), stencil, allow_unstable=True)
        e = dirichlet_energy(x)
        if e > e_prev:
            grew = True
        e_prev = e
    rows.append(("unstable", 0, dirichlet_energy(mode), e_prev, float("nan"), int(not grew)))
    write_csv(cfg.params["out"], cfg,
              ["check", "trial", "start_energy", "end_energy", "max_rel_increase", "violation"], rows)
    ok = violations == 0 and grew
    print(f"stability: {trials} stable trials, violations={violations}; "
          f"unstable mode grew={grew} -> {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_heatkernel(cfg: ExperimentConfig) -> int:
    L = cfg.get("L")
    times = [float(v) for v in cfg.params["times"].split(",")]
    rows, ok = [], True
    for t in times:
        K = heat_kernel(L, t)
        rowsum_err = float(np.abs(K.sum(axis=1) - 1).max())
        min_entry = float(K.min())
        semi_err = float(np.abs(heat_kernel(L, 2 * t) - K @ K).max())
        good = rowsum_err < 1e-8 and min_entry >= -1e-10 and semi_err < 1e-8
        ok &= good
        rows.append(("kernel", L, t, rowsum_err, min_entry, semi_err, int(not good)))
    eL, et = cfg.get("envelope_L"), cfg.get("envelope_t")
    K = heat_kernel(eL, et)
    center = eL // 2
    dist = np.abs(np.arange(eL) - center)
    win = (dist > 0) & (dist <= 3 * np.sqrt(2 * et))
    slope = float(np.polyfit(dist[win] ** 2.0, np.log(K[center, win]), 1)[0])
    target = -1.0 / (4 * et)
    env_ok = abs(slope - target) <= 0.25 * abs(target)
    ok &= env_ok
    rows.append(("envelope", eL, et, slope, target, slope / target, int(not env_ok)))
    write_csv(cfg.params["out"], cfg,
              ["check", "L", "t", "value_a", "value_b", "value_c", "violation"], rows)
    print(f"heatkernel: L={L} times={times} envelope slope={slope:.5f} target={target:.5f} "
          f"-> {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_fitscales(cfg: ExperimentConfig) -> int:
    ladders = [_parse_int_list(part) for part in cfg.params["ladder"].split(";") if part]
    omega_max, grid = cfg.get("omega_max"), cfg.get("grid_points")
    rows, errors = [], []
    for scales in ladders:
        weights, err = fit_multiscale_weights(scales, omega_max, grid)
        errors.append(err)
        rows.append((len(scales), "+".join(map(str, scales)), err,
                     "+".join(_FLOAT_FMT % w for w in weights)))
    write_csv(cfg.params["out"], cfg, ["n_scales", "scales", "rms_error", "weights"], rows)
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    print("fitscales: rms errors " + " > ".join(f"{e:.3e}" for e in errors)
          + f" -> {'strictly decreasing' if decreasing else 'NOT DECREASING'}")
    return EXIT_OK if decreasing else EXIT_FAIL


def _make_potential(cfg: ExperimentConfig, rng: np.random.Generator, L: int, d: int):
    kind = cfg.params["potential"]
    if kind == "none":
        return None
    anchor = rng.standard_normal((L, d)) if cfg.get("lambda_anchor") > 0 else None
    return ReactionPotential(kind=kind, mu=cfg.get("mu"),
                             lambda_anchor=cfg.get("lambda_anchor"), anchor=anchor)


def _cmd_flow(cfg: ExperimentConfig) -> int:
    L, d, seed = cfg.get("L"), cfg.get("d"), cfg.get("seed")
    rng = np.random.default_rng(seed)
    potential = _make_potential(cfg, rng, L, d)
    flow = FlowConfig(
        alpha_diff=cfg.get("alpha"),
        potential=potential,
        coupling=zero_coupling(L),
        dt=cfg.get("dt"),
        steps=cfg.get("steps"),
    )
    u0 = rng.standard_normal((L, d))
    _, trace = run_flow(u0, flow)
    rows = [(i, trace.energy[i], trace.grad_norm[i], trace.dirichlet[i]) for i in range(len(trace))]
    write_csv(cfg.params["out"], cfg, ["step", "energy", "grad_norm", "dirichlet"], rows)
    increases = np.diff(trace.energy) - 1e-9 * np.maximum(np.abs(trace.energy[:-1]), 1e-300)
    monotone = bool((increases <= 0).all())
    msg = f"flow: final_E={trace.energy[-1]:.6g} final_grad={trace.grad_norm[-1]:.3e} monotone={monotone}"
    ok = monotone or (potential is not None and not potential.convex)
    if potential is not None and potential.kind == "quadratic" and cfg.get("alpha") == 0:
        rate, rate_ok = check_exponential_decay(trace, potential.mu)
        ok &= rate_ok
        msg += f" decay_rate={rate:.4f} (mu={potential.mu}, ok={rate_ok})"
    print(msg + f" -> {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_sync(cfg: ExperimentConfig) -> int:
    H, L, d = cfg.get("heads"), cfg.get("L"), cfg.get("d")
    beta_val, seed = cfg.get("beta"), cfg.get("seed")
    topology = cfg.params["topology"]
    beta = np.zeros((H, H))
    if topology == "ring":
        for i in range(H):
            beta[i, (i + 1) % H] = beta[(i + 1) % H, i] = beta_val
    elif topology == "pairs":
        for i in range(0, H - 1, 2):
            beta[i, i + 1] = beta[i + 1, i] = beta_val
    else:
        raise ConfigError(f"unknown topology {topology!r}")
    rng = np.random.default_rng(seed)
    initials = []
    for i in range(H):
        u = rng.standard_normal((L, d))
        u -= u.mean()
        if topology == "pairs" and i >= H // 2:
            u += 1.0
        initials.append(u)
    sys_cfg = CoupledSystemConfig(
        heads=H, alpha=np.full(H, cfg.get("alpha")), beta=beta,
        dt=cfg.get("dt"), steps=cfg.get("steps"),
    )
    _, trace = simulate_coupled_heads(sys_cfg, initials)
    rows = [(i, trace[i]) for i in range(len(trace))]
    write_csv(cfg.params["out"], cfg, ["step", "disagreement"], rows)
    ratio = trace[-1] / trace[0]
    connected = sys_cfg.connected()
    if connected:
        ok = ratio < cfg.get("sync_ratio")
        expect = f"< {cfg.get('sync_ratio'):g}"
    else:
        ok = ratio > cfg.get("plateau_ratio")
        expect = f"> {cfg.get('plateau_ratio'):g}"
    print(f"sync: topology={topology} connected={connected} V(T)/V(0)={ratio:.3e} "
          f"(expect {expect}) -> {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_gradcheck(cfg: ExperimentConfig) -> int:
    L, d, trials, seed = cfg.get("L"), cfg.get("d"), cfg.get("trials"), cfg.get("seed")
    post_norm = cfg.get("post_norm")
    rng = np.random.default_rng(seed)
    params = DiffusionLayerParams.init(d, post_norm=post_norm)
    rows, worst = [], 0.0
    for trial in range(trials):
        p = replace(params, raw_alpha=rng.standard_normal(params.raw_alpha.shape))
        x = rng.standard_normal((L, d))
        err = grad_check(p, x, trials=1, seed=seed + trial)
        rows.append((trial, err))
        worst = max(worst, err)
    write_csv(cfg.params["out"], cfg, ["trial", "max_rel_err"], rows)
    tol = cfg.get("tol")
    ok = worst < tol
    print(f"gradcheck: L={L} d={d} post_norm={post_norm} max_rel_err={worst:.3e} "
          f"{'<' if ok else '>='} {tol:g} -> {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_train(cfg: ExperimentConfig) -> int:
    from .toy import DiffusionSettings, ModelConfig, build_model, make_task, save_split, train
    from .toy.training import DivergenceError

    task = cfg.params["task"]
    ds = make_task(task, n_train=cfg.get("n_train"), n_val=cfg.get("n_val"),
                   seed=cfg.get("data_seed"), max_len=cfg.get("max_len"))
    model_cfg = ModelConfig(
        dim=cfg.get("dim"), layers=cfg.get("layers"), heads=cfg.get("heads"),
        mlp_hidden=cfg.get("mlp_hidden"), vocab=ds.vocab, max_len=ds.max_len,
        num_classes=ds.num_classes, position=cfg.params["position"],
        pde=DiffusionSettings(post_norm=cfg.get("post_norm")), seed=cfg.get("seed"),
    )
    model = build_model(model_cfg)
    schedule = cfg.params["schedule"] if cfg.params["schedule"] != "none" else None
    try:
        report = train(model, ds, epochs=cfg.get("epochs"), batch=cfg.get("batch"),
                       lr=cfg.get("lr"), seed=cfg.get("seed"), schedule=schedule)
    except DivergenceError as exc:
        print(f"train: DIVERGED ({exc})")
        return EXIT_FAIL
    rows = [(e + 1, report.losses[e], report.val_accs[e], report.secs[e])
            for e in range(report.epochs)]
    write_csv(cfg.params["out"], cfg, ["epoch", "loss", "val_acc", "sec"], rows)
    if cfg.params["save_params"] and model.pde is not None:
        text = params_to_text(DiffusionLayerParams(
            scales=model.pde.scales,
            raw_alpha=model.pde.raw_alpha.detach().numpy(),
            mix_weights=model.pde.mix_weights.detach().numpy(),
            alpha_bound=model.pde.alpha_bound,
            post_norm=model.pde.post_norm,
            boundary=BoundaryMode(model.pde.boundary),
        ))
        Path(cfg.params["save_params"]).write_text(text)
    if cfg.params["save_data"]:
        out_dir = Path(cfg.params["save_data"])
        out_dir.mkdir(parents=True, exist_ok=True)
        save_split(out_dir / f"{task}-train.tsv", ds.train_tokens, ds.train_labels)
        save_split(out_dir / f"{task}-val.tsv", ds.val_tokens, ds.val_labels)
    print(f"train: task={task} position={cfg.params['position']} "
          f"final_val_acc={report.final_val_acc:.4f} majority={ds.majority_accuracy():.4f} "
          f"cfl_violations={report.cfl_violations}")
    return EXIT_OK


def _cmd_rank_positions(cfg: ExperimentConfig) -> int:
    from .toy import ModelConfig, DiffusionSettings, evaluate_positions, make_task

    ds = make_task(cfg.params["task"], n_train=cfg.get("n_train"), n_val=cfg.get("n_val"),
                   seed=cfg.get("data_seed"), max_len=cfg.get("max_len"))
    seeds = _parse_int_list(cfg.params["seeds"])
    base = ModelConfig(
        dim=cfg.get("dim"), layers=cfg.get("layers"), heads=cfg.get("heads"),
        mlp_hidden=cfg.get("mlp_hidden"), vocab=ds.vocab, max_len=ds.max_len,
        num_classes=ds.num_classes, pde=DiffusionSettings(), seed=seeds[0],
    )
    frozen = cfg.get("freeze_alpha_raw") if cfg.params["freeze_alpha_raw"] != "nan" else None
    schedule = cfg.params["schedule"] if cfg.params["schedule"] != "none" else None
    results = evaluate_positions(
        base, ds, seeds, epochs=cfg.get("epochs"), batch=cfg.get("batch"),
        lr=cfg.get("lr"), frozen_alpha_raw=frozen, schedule=schedule,
    )
    rows = [(r.position, r.mean, r.std, "+".join(_FLOAT_FMT % a for a in r.accuracies))
            for r in results]
    write_csv(cfg.params["out"], cfg, ["position", "mean_acc", "std_acc", "accs"], rows)
    print(f"rank-positions: task={cfg.params['task']} seeds={seeds}")
    for r in results:
        print(f"  {r.position:18s} {r.mean:.4f} +/- {r.std:.4f}")
    return EXIT_OK


def _cmd_retention(cfg: ExperimentConfig) -> int:
    from .toy.retention import estimate_retention

    est = estimate_retention(
        cfg.get("depth"), trials=cfg.get("trials"), bins=cfg.get("bins"),
        flip_prob=cfg.get("flip_prob"), seed=cfg.get("seed"),
    )
    rows = [(int(est.depths[i]), est.rho[i], est.mi_raw[i], est.mi_smoothed[i])
            for i in range(len(est.depths))]
    write_csv(cfg.params["out"], cfg, ["depth", "rho", "mi_raw", "mi_smoothed"], rows)
    print(f"retention: depths={est.depths.tolist()} rho={np.round(est.rho, 4).tolist()} "
          f"spearman={est.spearman:.3f}")
    return EXIT_OK


def _cmd_bench_complexity(cfg: ExperimentConfig) -> int:
    grid = _parse_int_list(cfg.params["l_grid"])
    report = bench_mod.bench_complexity(
        grid, d=cfg.get("d"), k=cfg.get("k"), reps=cfg.get("reps"),
        attention_max_l=cfg.get("attention_max_l"), seed=cfg.get("seed"),
    )
    rows = [("diffusion", L, m, i) for L, m, i in
            zip(report.l_values, report.diffusion_medians, report.diffusion_iqrs)]
    rows += [("attention", L, m, i) for L, m, i in
             zip(report.attention_l_values, report.attention_medians, report.attention_iqrs)]
    write_csv(cfg.params["out"], cfg, ["kind", "L", "median_s", "iqr_s"], rows)
    ok = (0.85 <= report.diffusion_slope <= 1.15 and report.diffusion_r2 >= 0.98
          and 1.7 <= report.attention_slope <= 2.3 and report.attention_r2 >= 0.98
          and 1.6 <= report.k_double_ratio <= 2.4)
    if report.noisy():
        print("bench-complexity: WARNING timing variance above 20% of the median")
    print(f"bench-complexity: diffusion slope={report.diffusion_slope:.3f} (R2={report.diffusion_r2:.4f}) "
          f"attention slope={report.attention_slope:.3f} (R2={report.attention_r2:.4f}) "
          f"K-doubling ratio={report.k_double_ratio:.2f} -> {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


# ------------------------------------------------------------------- schemas

SCHEMAS: dict[str, dict[str, Arg]] = {
    "spectrum": {
        "L": Arg(int, 8, "lattice length"),
        "tol": Arg(float, 1e-10, "max allowed eigenvalue mismatch"),
        "seed": Arg(int, 0, "unused; kept for header uniformity"),
        "out": Arg(str, "spectrum.csv", "output CSV path"),
    },
    "stability": {
        "L": Arg(int, 32, "lattice length"),
        "d": Arg(int, 4, "channels"),
        "trials": Arg(int, 100, "random fields"),
        "steps": Arg(int, 1000, "diffusion steps per trial"),
        "alpha": Arg(float, 0.49, "stable-side coefficient"),
        "unstable_alpha": Arg(float, 0.51, "coefficient for the blow-up check"),
        "seed": Arg(int, 0, "rng seed"),
        "out": Arg(str, "stability.csv", "output CSV path"),
    },
    "heatkernel": {
        "L": Arg(int, 64, "kernel size for the stochasticity checks"),
        "times": Arg(str, "1,4,16", "comma-separated times"),
        "envelope_L": Arg(int, 256, "size for the envelope regression"),
        "envelope_t": Arg(float, 32.0, "time for the envelope regression"),
        "seed": Arg(int, 0, "unused; kept for header uniformity"),
        "out": Arg(str, "heatkernel.csv", "output CSV path"),
    },
    "fitscales": {
        "ladder": Arg(str, "1;1,2;1,2,4;1,2,4,8", "semicolon-separated scale sets"),
        "omega_max": Arg(float, float(np.pi / 2), "fit domain upper end"),
        "grid_points": Arg(int, 512, "fit grid size"),
        "seed": Arg(int, 0, "unused; kept for header uniformity"),
        "out": Arg(str, "fitscales.csv", "output CSV path"),
    },
    "flow": {
        "L": Arg(int, 16, "lattice length"),
        "d": Arg(int, 2, "channels"),
        "potential": Arg(str, "quadratic", "none|quadratic|anchored-quadratic|double-well-anchored"),
        "mu": Arg(float, 1.0, "convexity parameter"),
        "lambda_anchor": Arg(float, 0.0, "anchor strength"),
        "alpha": Arg(float, 0.0, "diffusion strength"),
        "dt": Arg(float, 0.01, "time step"),
        "steps": Arg(int, 600, "Euler steps"),
        "seed": Arg(int, 0, "rng seed"),
        "out": Arg(str, "flow.csv", "output CSV path"),
    },
    "sync": {
        "heads": Arg(int, 4, "number of coupled heads"),
        "topology": Arg(str, "ring", "ring|pairs"),
        "beta": Arg(float, 0.2, "edge coupling strength"),
        "alpha": Arg(float, 0.1, "per-head diffusion"),
        "L": Arg(int, 8, "lattice length"),
        "d": Arg(int, 2, "channels"),
        "dt": Arg(float, 0.5, "time step"),
        "steps": Arg(int, 200, "Euler steps"),
        "sync_ratio": Arg(float, 1e-6, "pass bound for connected graphs"),
        "plateau_ratio": Arg(float, 0.1, "pass floor for disconnected graphs"),
        "seed": Arg(int, 0, "rng seed"),
        "out": Arg(str, "sync.csv", "output CSV path"),
    },
    "gradcheck": {
        "L": Arg(int, 16, "lattice length"),
        "d": Arg(int, 4, "channels"),
        "trials": Arg(int, 20, "random trials"),
        "post_norm": Arg(bool, False, "check the normalized path"),
        "tol": Arg(float, 1e-5, "max allowed relative error"),
        "seed": Arg(int, 0, "rng seed"),
        "out": Arg(str, "gradcheck.csv", "output CSV path"),
    },
    "train": {
        "task": Arg(str, "listops-mini", "listops-mini|denoise-1d"),
        "n_train": Arg(int, 10000, "training examples"),
        "n_val": Arg(int, 1000, "validation examples"),
        "max_len": Arg(int, 64, "sequence length"),
        "data_seed": Arg(int, 0, "dataset generator seed"),
        "dim": Arg(int, 64, "model width"),
        "layers": Arg(int, 2, "encoder blocks"),
        "heads": Arg(int, 4, "attention heads"),
        "mlp_hidden": Arg(int, 256, "MLP hidden width"),
        "position": Arg(str, "none", "diffusion integration position"),
        "post_norm": Arg(bool, False, "normalize after each diffusion update"),
        "epochs": Arg(int, 20, "training epochs"),
        "batch": Arg(int, 64, "batch size"),
        "lr": Arg(float, 0.3, "learning rate"),
        "schedule": Arg(str, "warmup-cosine", "none|warmup-cosine"),
        "seed": Arg(int, 0, "training seed"),
        "save_params": Arg(str, "", "optional path for the diffusion parameter text"),
        "save_data": Arg(str, "", "optional directory for TSV dataset dumps"),
        "out": Arg(str, "train.csv", "output CSV path"),
    },
    "rank-positions": {
        "task": Arg(str, "listops-mini", "listops-mini|denoise-1d"),
        "n_train": Arg(int, 2000, "training examples"),
        "n_val": Arg(int, 500, "validation examples"),
        "max_len": Arg(int, 64, "sequence length"),
        "data_seed": Arg(int, 0, "dataset generator seed"),
        "dim": Arg(int, 32, "model width"),
        "layers": Arg(int, 1, "encoder blocks"),
        "heads": Arg(int, 2, "attention heads"),
        "mlp_hidden": Arg(int, 128, "MLP hidden width"),
        "epochs": Arg(int, 3, "training epochs per run"),
        "batch": Arg(int, 64, "batch size"),
        "lr": Arg(float, 0.3, "learning rate"),
        "schedule": Arg(str, "warmup-cosine", "none|warmup-cosine"),
        "seeds": Arg(str, "0,1,2", "comma-separated seeds"),
        "freeze_alpha_raw": Arg(float, float("nan"), "freeze coefficients at this raw value"),
        "seed": Arg(int, 0, "unused; kept for header uniformity"),
        "out": Arg(str, "rank_positions.csv", "output CSV path"),
    },
    "retention": {
        "depth": Arg(int, 4, "chain depth"),
        "trials": Arg(int, 5000, "Monte Carlo trials"),
        "bins": Arg(int, 24, "histogram bins"),
        "flip_prob": Arg(float, 0.1, "per-step per-symbol resample probability"),
        "seed": Arg(int, 0, "rng seed"),
        "out": Arg(str, "retention.csv", "output CSV path"),
    },
    "bench-complexity": {
        "l_grid": Arg(str, "256,512,1024,2048,4096,8192", "comma-separated lengths"),
        "d": Arg(int, 64, "channels"),
        "k": Arg(int, 3, "number of diffusion scales"),
        "reps": Arg(int, 7, "repetitions per timing"),
        "attention_max_l": Arg(int, 4096, "largest length timed for attention"),
        "seed": Arg(int, 0, "workload seed"),
        "out": Arg(str, "bench_complexity.csv", "output CSV path"),
    },
}

_RUNNERS = {
    "spectrum": _cmd_spectrum,
    "stability": _cmd_stability,
    "heatkernel": _cmd_heatkernel,
    "fitscales": _cmd_fitscales,
    "flow": _cmd_flow,
    "sync": _cmd_sync,
    "gradcheck": _cmd_gradcheck,
    "train": _cmd_train,
    "rank-positions": _cmd_rank_positions,
    "retention": _cmd_retention,
    "bench-complexity": _cmd_bench_complexity,
}


def run(config: ExperimentConfig) -> int:
    """Execute one experiment; returns the process exit code."""
    if os.environ.get("PDELAB_DETERMINISTIC", "1") != "0":
        try:
            import torch

            torch.set_num_threads(1)
        except ImportError:
            pass
    try:
        return _RUNNERS[config.subcommand](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def load_config_file(path: str | Path) -> ExperimentConfig:
    kv = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"malformed line in config file: {line!r}")
        kv[key.strip()] = value.strip()
    sub = kv.pop("subcommand", None)
    if sub is None:
        raise ConfigError("config file does not define 'subcommand'")
    if sub not in SCHEMAS:
        raise ConfigError(f"unknown subcommand {sub!r}")
    return build_config(sub, kv)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdelab",
        description="Numerical laboratory for diffusion-smoothed sequence models.",
    )
    parser.add_argument("--config", help="key=value config file defining the run")
    subs = parser.add_subparsers(dest="subcommand")
    for name, schema in SCHEMAS.items():
        sp = subs.add_parser(name, help=f"run the {name} experiment")
        for key, arg in schema.items():
            flag = "--" + key.replace("_", "-")
            if arg.type is bool:
                sp.add_argument(flag, dest=key, action="store_true", default=None, help=arg.help)
            else:
                sp.add_argument(flag, dest=key, type=str, default=None,
                                help=f"{arg.help} (default {arg.default})")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            config = load_config_file(args.config)
        elif args.subcommand:
            overrides = {k: v for k, v in vars(args).items()
                         if k not in ("config", "subcommand") and v is not None}
            config = build_config(args.subcommand, overrides)
        else:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
