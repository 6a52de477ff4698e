//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion does.
//!
//! The training criteria (4, 5, 6, 11) run the desk preset at full size and
//! take tens of minutes on a single core.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermal_pinn::ageing::{
    ageing_field, compare_configurations, synthesize_fos, winding_field, PinnReadout, FOS_HEIGHTS,
};
use thermal_pinn::experiments::{load_series, median, solve_oracle, ExperimentConfig, Preset};
use thermal_pinn::iec::{ageing_factor, hst_series, IecParams};
use thermal_pinn::metrics::{ensemble_run, ensemble_stats, gamma2, max_abs_error};
use thermal_pinn::nn::{param_count, Jet, Mlp};
use thermal_pinn::pde::{convergence_study, ManufacturedSolution, MmsDrive, PdeParams, TemperatureField};
use thermal_pinn::pinn::{
    predict_matching, rba_update, sa_update, train, CollocationSize, SchemeConfig, TrainConfig, Trainer,
};
use thermal_pinn::timeseries::OperatingSeries;

type Outcome = Result<String, String>;

/// Writes to the stdout handle itself, which the test harness does not
/// capture, so the report shows without `--nocapture`.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, $($arg)*);
        let _ = out.flush();
    }};
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

// ---------------------------------------------------------------- 1

fn pde_oracle() -> Outcome {
    let params = PdeParams {
        alpha: 0.1,
        k: 1.0,
        h: 0.5,
        p0: 1.0,
        mu: 2.0,
        height: 1.0,
        v_eff: 1.0,
    };
    let drive = MmsDrive { load: 0.7, ambient: 25.0 };
    let start = Instant::now();
    let r = convergence_study(&ManufacturedSolution::DecayingSine, &params, &drive, &[26, 51, 101, 201], 1.0, 4000)
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let finest = *r.errors.last().unwrap();
    let orders_ok = r.orders.iter().all(|p| (1.85..=2.15).contains(p));
    ensure(
        finest < 1e-4 && orders_ok && secs < 30.0,
        format!("L∞ {finest:.2e} at Nx=201, orders {:.3?}, {secs:.2} s", r.orders),
    )
}

// ---------------------------------------------------------------- 2

fn random_net(rng: &mut ChaCha8Rng) -> Mlp {
    let depth = rng.random_range(1..=2);
    let mut widths = vec![2];
    for _ in 0..depth {
        widths.push(rng.random_range(2..=20));
    }
    widths.push(3);
    let params = (0..param_count(&widths)).map(|_| rng.random_range(-1.0..1.0)).collect();
    Mlp::from_params(&widths, params).unwrap()
}

fn probe_loss(m: &Mlp, pts: &[[f64; 2]]) -> f64 {
    let e = m.input_derivatives(pts);
    (0..pts.len())
        .map(|i| {
            let r = e.du_dt[[i, 0]] - 0.3 * e.d2u_dx2[[i, 0]] + e.u[[i, 1]] - e.u[[i, 2]];
            r * r
        })
        .sum::<f64>()
        / pts.len() as f64
}

fn probe_gradient(m: &Mlp, pts: &[[f64; 2]]) -> Vec<f64> {
    let cache = m.forward_cached(pts, Jet::Second);
    let e = cache.evaluation();
    let mut seeds = cache.seeds();
    let n = pts.len() as f64;
    for i in 0..pts.len() {
        let r = e.du_dt[[i, 0]] - 0.3 * e.d2u_dx2[[i, 0]] + e.u[[i, 1]] - e.u[[i, 2]];
        let g = 2.0 * r / n;
        seeds.set_dt(i, 0, g);
        seeds.set_dxx(i, 0, -0.3 * g);
        seeds.set_value(i, 1, g);
        seeds.set_value(i, 2, -g);
    }
    m.backward(&cache, &seeds)
}

fn autodiff() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-4;
    let (mut d1, mut d2, mut dg) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let m = random_net(&mut rng);
        let pts: Vec<[f64; 2]> = (0..100).map(|_| [rng.random(), rng.random()]).collect();
        let e = m.input_derivatives(&pts);
        for (i, &[x, t]) in pts.iter().enumerate() {
            let f = |x: f64, t: f64| m.forward(&[[x, t]]);
            let (xp, xm, tp, tm, c) = (f(x + h, t), f(x - h, t), f(x, t + h), f(x, t - h), f(x, t));
            for k in 0..3 {
                let dx = (xp[[0, k]] - xm[[0, k]]) / (2.0 * h);
                let dt = (tp[[0, k]] - tm[[0, k]]) / (2.0 * h);
                let dxx = (xp[[0, k]] - 2.0 * c[[0, k]] + xm[[0, k]]) / (h * h);
                d1 = d1.max(rel(e.du_dx[[i, k]], dx)).max(rel(e.du_dt[[i, k]], dt));
                d2 = d2.max(rel(e.d2u_dx2[[i, k]], dxx));
            }
        }
        let g = probe_gradient(&m, &pts);
        for _ in 0..10 {
            let d: Vec<f64> = (0..m.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let eps = 1e-5;
            let shifted = |s: f64| {
                let p = m.params().iter().zip(&d).map(|(p, di)| p + s * eps * di / norm).collect();
                probe_loss(&Mlp::from_params(m.widths(), p).unwrap(), &pts)
            };
            let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
            let ad: f64 = g.iter().zip(&d).map(|(a, b)| a * b / norm).sum();
            dg = dg.max(rel(ad, fd));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        d1 < 1e-6 && d2 < 1e-4 && dg < 1e-5 && secs < 60.0,
        format!("first {d1:.1e}, second {d2:.1e}, directional {dg:.1e}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 3

fn iec_identities() -> Outcome {
    let mut worst_v = 0.0f64;
    let mut th = -40.0;
    while th <= 200.0 {
        let (a, b) = (ageing_factor(th + 6.0), 2.0 * ageing_factor(th));
        worst_v = worst_v.max((a - b).abs() / b);
        th += 0.01;
    }

    let p = IecParams::nameplate(1.6, 60.0);
    let n = (10.0 * p.tau_to) as usize + 1;
    let mut k = vec![1.2; n];
    k[0] = 0.3;
    let s = OperatingSeries::new(0.0, 60.0, k, vec![20.0; n], vec![60.0; n], None).map_err(|e| e.to_string())?;
    let traj = hst_series(&s, &p).map_err(|e| e.to_string())?;
    let steady = 60.0 + p.delta_theta_hr * 1.2f64.powf(p.y);
    let gap = (traj.theta_h[n - 1] - steady).abs();

    let to: Vec<f64> = (0..500).map(|i| 50.0 + (i as f64 * 0.01).sin()).collect();
    let s0 = OperatingSeries::new(0.0, 60.0, vec![0.0; 500], vec![20.0; 500], to.clone(), None)
        .map_err(|e| e.to_string())?;
    let unloaded = hst_series(&s0, &p).map_err(|e| e.to_string())?;
    let zero_ok = unloaded.theta_h == to;

    ensure(
        worst_v < 1e-12 && gap < 0.01 && zero_ok,
        format!("V doubling {worst_v:.1e}, steady-state gap {gap:.2e} K, K≡0 identity {zero_ok}"),
    )
}

// ---------------------------------------------------------------- 7

fn weighting_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bound_viol = 0usize;
    for _ in 0..10_000 {
        let gamma = rng.random_range(0.5..0.9999);
        let eta = rng.random_range(1e-4..0.1);
        let lam0 = rng.random_range(0.0..2.0);
        let width = rng.random_range(1..=8);
        let steps = rng.random_range(1..=200);
        let mut lam = vec![lam0; width];
        for _ in 0..steps {
            let r: Vec<f64> = (0..width).map(|_| rng.random_range(-10.0..10.0)).collect();
            rba_update(&mut lam, &r, gamma, eta);
        }
        let bound = lam0 * gamma.powi(steps) + eta / (1.0 - gamma);
        bound_viol += lam.iter().filter(|&&l| l > bound * (1.0 + 1e-12)).count();
    }

    let mut scale_dev = 0.0f64;
    for _ in 0..1000 {
        let r: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = 10f64.powf(rng.random_range(-6.0..6.0));
        let rc: Vec<f64> = r.iter().map(|v| v * c).collect();
        let init: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let (mut a, mut b) = (init.clone(), init);
        rba_update(&mut a, &r, 0.999, 0.001);
        rba_update(&mut b, &rc, 0.999, 0.001);
        scale_dev = a.iter().zip(&b).fold(scale_dev, |m, (x, y)| m.max((x - y).abs()));
    }

    let mut sa_decreases = 0usize;
    for _ in 0..10_000 {
        let mut lam = vec![rng.random_range(0.0..5.0)];
        let before = lam[0];
        let e = rng.random_range(-3.0..3.0f64);
        if e == 0.0 {
            continue;
        }
        sa_update(&mut lam, &[e * e], rng.random_range(1e-4..1.0));
        sa_decreases += usize::from(lam[0] < before);
    }
    ensure(
        bound_viol == 0 && scale_dev < 1e-15 && sa_decreases == 0,
        format!("RBA bound violations {bound_viol}, scaling deviation {scale_dev:.1e}, SA decreases {sa_decreases}"),
    )
}

// ---------------------------------------------------------------- 8

fn ageing_chain(cfg: &ExperimentConfig, series: &OperatingSeries, oracle: &TemperatureField) -> Outcome {
    let w = winding_field(oracle, series, &cfg.iec).map_err(|e| e.to_string())?;
    let mut rise_exact = true;
    for ix in 0..oracle.nx() {
        for it in 0..oracle.nt() {
            rise_exact &= w.field.get(ix, it).to_bits() == (oracle.get(ix, it) + w.rise[it]).to_bits();
        }
    }
    let a = ageing_field(&w, series.dt).map_err(|e| e.to_string())?;
    let monotone = (0..a.lol.nx()).all(|ix| a.lol.row(ix).windows(2).all(|p| p[1] >= p[0]));

    let mut s = series.clone();
    s.fos = Some(synthesize_fos(oracle, series, &cfg.iec, &FOS_HEIGHTS, 0.0, 0).map_err(|e| e.to_string())?);
    let rep = compare_configurations(oracle, &s, &cfg.iec, PinnReadout::SensorHeights).map_err(|e| e.to_string())?;
    let (ev, _) = rep.max_abs_errors();
    let lol_err = rep.lol_error_pinn.abs();
    ensure(
        rise_exact && monotone && ev < 1e-9 && lol_err < 1e-9,
        format!("rise x-independent {rise_exact}, LOL monotone {monotone}, max |e_vPINN| {ev:.1e}, LOL error {lol_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 9

fn small_train(seed: u64) -> TrainConfig {
    TrainConfig {
        widths: vec![2, 10, 10, 3],
        collocation: CollocationSize::Count(500),
        iterations: 40,
        data_batch: 64,
        collocation_batch: 64,
        log_every: 40,
        seed,
        ..TrainConfig::desk()
    }
}

fn ensemble(cfg: &ExperimentConfig, series: &OperatingSeries, oracle: &TemperatureField) -> Outcome {
    let run = |seed: u64| {
        let out = train(series, &cfg.pde, &SchemeConfig::rba(), &small_train(seed))?;
        Ok((predict_matching(&out.model, oracle, &out.scaling)?, out.wall_time_s))
    };
    let forced = ensemble_run("rba", 4, 0, 2, Some(oracle), |_| run(5)).map_err(|e| e.to_string())?;
    let max_std = forced.stats.std.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut fields: Vec<(u64, TemperatureField)> = (0..5).map(|s| run(s).map(|(f, _)| (s, f))).collect::<Result<_, thermal_pinn::Error>>().map_err(|e| e.to_string())?;
    let base = ensemble_stats(&fields).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut identical = true;
    for _ in 0..5 {
        fields.shuffle(&mut rng);
        let s = ensemble_stats(&fields).map_err(|e| e.to_string())?;
        identical &= bits(&s.mean.values) == bits(&base.mean.values) && bits(&s.std.values) == bits(&base.std.values);
    }
    ensure(
        max_std == 0.0 && identical && forced.failed == 0,
        format!("identical-seed max σ {max_std:e}, permutations bit-identical {identical}"),
    )
}

// ---------------------------------------------------------------- 10

fn determinism(oracle: &TemperatureField) -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snaps = Vec::new();
    for round in 0..2 {
        let out = tmp.path().join(format!("run{round}"));
        let cfg = common::write_config(tmp.path(), &common::tiny_config(&out));
        for cmd in ["solve-pde", "train", "compare-schemes", "sweep", "ageing", "uncertainty"] {
            common::run(&[cmd], &cfg);
        }
        snaps.push(common::snapshot(&out));
    }
    let cli_same = snaps[0] == snaps[1];

    let mut csv = Vec::new();
    oracle.write_csv(&mut csv).map_err(|e| e.to_string())?;
    let from_csv = TemperatureField::read_csv(csv.as_slice()).map_err(|e| e.to_string())?;
    let mut bin = Vec::new();
    oracle.write_binary(&mut bin).map_err(|e| e.to_string())?;
    let from_bin = TemperatureField::read_binary(bin.as_slice()).map_err(|e| e.to_string())?;
    let field_same = |f: &TemperatureField| {
        bits(&f.values) == bits(&oracle.values) && bits(&f.x_grid) == bits(&oracle.x_grid) && bits(&f.t_grid) == bits(&oracle.t_grid)
    };
    let fields_ok = field_same(&from_csv) && field_same(&from_bin);

    let m = Mlp::glorot(&[2, 50, 50, 50, 3], 9).map_err(|e| e.to_string())?;
    let mut ck = Vec::new();
    m.write_checkpoint(&mut ck).map_err(|e| e.to_string())?;
    let back = Mlp::read_checkpoint(ck.as_slice()).map_err(|e| e.to_string())?;
    let ck_ok = back.widths() == m.widths() && bits(back.params()) == bits(m.params());

    ensure(
        cli_same && fields_ok && ck_ok,
        format!(
            "{} CLI artifacts identical {cli_same}, field CSV/binary {fields_ok}, checkpoint {ck_ok}",
            snaps[0].len()
        ),
    )
}

// ---------------------------------------------------------------- 4, 5, 11

struct Run {
    gamma2: f64,
    max_abs: f64,
    compound: f64,
}

struct Runs {
    rba: Vec<Run>,
    vanilla: Vec<Run>,
    sa: Vec<Run>,
    data_only: Vec<Run>,
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn train_runs(cfg: &ExperimentConfig, series: &OperatingSeries, oracle: &TemperatureField) -> Result<Runs, String> {
    let go = |scheme: &SchemeConfig| -> Result<Vec<Run>, String> {
        SEEDS
            .iter()
            .map(|&seed| {
                let tc = TrainConfig { seed, ..cfg.train.clone() };
                let out = train(series, &cfg.pde, scheme, &tc).map_err(|e| e.to_string())?;
                let pred = predict_matching(&out.model, oracle, &out.scaling).map_err(|e| e.to_string())?;
                let r = Run {
                    gamma2: gamma2(&pred, oracle).map_err(|e| e.to_string())?,
                    max_abs: max_abs_error(&pred, oracle).map_err(|e| e.to_string())?,
                    compound: out.final_loss.compound_mse(),
                };
                say!(
                    "      {:<9} seed {seed}: Γ2 {:.4}  max|e| {:.2} K  compound MSE {:.3e}  {:.1} s",
                    scheme.name(),
                    r.gamma2,
                    r.max_abs,
                    r.compound,
                    out.wall_time_s
                );
                Ok(r)
            })
            .collect()
    };
    Ok(Runs {
        rba: go(&SchemeConfig::rba())?,
        vanilla: go(&SchemeConfig::vanilla())?,
        sa: go(&SchemeConfig::self_adaptive())?,
        data_only: go(&SchemeConfig::DataOnly)?,
    })
}

fn fidelity(runs: &Runs) -> Outcome {
    let g: Vec<f64> = runs.rba.iter().map(|r| r.gamma2).collect();
    let med = median(&g).unwrap();
    ensure(med < 0.05, format!("RBA median Γ2 {med:.4} over seeds {g:.4?}"))
}

fn count(a: &[Run], b: &[Run], key: fn(&Run) -> f64) -> usize {
    a.iter().zip(b).filter(|(x, y)| key(x) <= key(y)).count()
}

fn ordering(runs: &Runs) -> Outcome {
    let loss = count(&runs.rba, &runs.vanilla, |r| r.compound);
    let err = count(&runs.rba, &runs.vanilla, |r| r.max_abs);
    let sa = count(&runs.sa, &runs.vanilla, |r| r.max_abs);
    let soft = if sa >= 3 { "met" } else { "not met" };
    ensure(
        loss >= 4 && err >= 4,
        format!("RBA ≤ Vanilla: compound loss {loss}/5, max error {err}/5; SA ≤ Vanilla max error {sa}/5 (soft, {soft})"),
    )
}

fn data_only_baseline(runs: &Runs) -> Outcome {
    let worse = runs.data_only.iter().zip(&runs.rba).filter(|(d, r)| d.gamma2 > r.gamma2).count();
    let g: Vec<f64> = runs.data_only.iter().map(|r| r.gamma2).collect();
    ensure(worse >= 4, format!("DataOnly Γ2 above RBA in {worse}/5 seeds (DataOnly Γ2 {g:.4?})"))
}

// ---------------------------------------------------------------- 6

/// Median per-iteration milliseconds of Vanilla, RBA and SA over three
/// runs. The three trainers advance in lockstep, rotating which goes first,
/// so drift in machine speed hits all of them alike.
fn lockstep_ms(series: &OperatingSeries, pde: &PdeParams, base: &TrainConfig) -> Result<[f64; 3], String> {
    let schemes = [SchemeConfig::vanilla(), SchemeConfig::rba(), SchemeConfig::self_adaptive()];
    let mut per_it: [Vec<f64>; 3] = Default::default();
    for rep in 0..3 {
        let tc = TrainConfig { seed: rep, ..base.clone() };
        let mut trainers = schemes
            .iter()
            .map(|s| Trainer::new(series, pde, s, &tc))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        for it in 0..tc.iterations {
            for k in 0..3 {
                trainers[(it + k) % 3].step().map_err(|e| e.to_string())?;
            }
        }
        for (i, t) in trainers.iter().enumerate() {
            per_it[i].push(t.elapsed().as_secs_f64() * 1e3 / tc.iterations as f64);
        }
    }
    Ok(per_it.map(|t| median(&t).unwrap()))
}

fn wall_time(cfg: &ExperimentConfig, series: &OperatingSeries) -> Outcome {
    // The scheme-specific work is O(batch) and small next to the network
    // passes, so the ordering is asserted on a narrow network where it is
    // resolvable; the desk network is measured for the record.
    let narrow = TrainConfig {
        widths: vec![2, 10, 3],
        iterations: 2000,
        log_every: 2000,
        ..cfg.train.clone()
    };
    let [v, r, s] = lockstep_ms(series, &cfg.pde, &narrow)?;
    let desk = TrainConfig { iterations: 200, log_every: 200, ..cfg.train.clone() };
    let [dv, dr, ds] = lockstep_ms(series, &cfg.pde, &desk)?;
    ensure(
        v <= r && r <= s,
        format!(
            "median ms/iteration Vanilla {v:.4}, RBA {r:.4}, SA {s:.4} (2-10-3 net); \
             desk net {dv:.2}, {dr:.2}, {ds:.2} (not asserted)"
        ),
    )
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    let cfg = ExperimentConfig::preset(Preset::Desk);
    let series = load_series(&cfg).unwrap();
    let oracle = solve_oracle(&cfg, &series).unwrap();

    let mut failed = Vec::new();
    let mut check = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => say!("PASS {id:>2} {name}: {msg} [{secs:.0} s]"),
            Err(msg) => {
                say!("FAIL {id:>2} {name}: {msg} [{secs:.0} s]");
                failed.push(id);
            }
        }
    };

    check(1, "PDE oracle", &mut pde_oracle);
    check(2, "autodiff", &mut autodiff);
    check(3, "IEC identities", &mut iec_identities);
    check(7, "weighting algebra", &mut weighting_algebra);
    check(8, "ageing chain", &mut || ageing_chain(&cfg, &series, &oracle));
    check(9, "ensemble statistics", &mut || ensemble(&cfg, &series, &oracle));
    check(10, "determinism and round trips", &mut || determinism(&oracle));

    let runs = train_runs(&cfg, &series, &oracle);
    let runs = &runs;
    let shared = |f: fn(&Runs) -> Outcome| move || runs.as_ref().map_err(|e| e.clone()).and_then(f);
    check(4, "PINN fidelity", &mut shared(fidelity));
    check(5, "scheme ordering", &mut shared(ordering));
    check(11, "data-only baseline", &mut shared(data_only_baseline));
    check(6, "wall-time ordering", &mut || wall_time(&cfg, &series));

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
