//! End-to-end acceptance checks at desk scale (N=4, L=16, K=2, 18 dBm,
//! 500 training iterations).
//!
//! This target has its own `main` rather than the libtest harness: the
//! criteria run in order, each prints one PASS/FAIL line, and the process
//! exits non-zero if any fails. Arguments that do not start with `-` filter
//! criteria by name, e.g. `cargo test --test acceptance -- quantized`.
//!
//! Trained models are cached under the cargo target tmpdir and shared by all
//! criteria that use the same configuration.

use std::f64::consts::TAU;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use starsec::channel::{sample_realization, ChannelRealization, ScenarioConfig};
use starsec::graphnn::{
    batch_loss, loss_and_grad, perfect_samples, BeamHead, FeatureScaling, GnnModel, LossVariant,
    ModelConfig, PhaseHead,
};
use starsec::secrecy::{check_constraints, evaluate, StarCoefficients, Strategy};
use starsec::tensor::{finite_diff_check, ComplexMatrix};
use starsec_cli::{
    paired_std_err, run_experiment, ExperimentKind, ExperimentOutput, ExperimentSpec, Profile,
    RunOptions, Scheme,
};

const SEED: u64 = 20240;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn cache_dir() -> PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    })
    .clone()
}

fn run(kind: ExperimentKind, axis: Vec<f64>, schemes: Vec<Scheme>) -> ExperimentOutput {
    let mut spec = ExperimentSpec::new(kind, Profile::Desk, SEED);
    spec.axis = axis;
    spec.schemes = schemes;
    let opts = RunOptions {
        cache_dir: Some(cache_dir()),
        ..Default::default()
    };
    let out = run_experiment(&spec, &opts).unwrap();
    for r in &out.records {
        assert_eq!(r.status, "ok", "{} {} at {}", r.scheme, r.variant, r.axis);
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

// ---------------------------------------------------------------------------
// 1. SINR and secrecy-rate formulas against a scalar expansion

/// `Σ_l conj(f_l) c_l Σ_n G_ln w_n`, written out from the raw channels.
fn surface_sum(
    f: &ComplexMatrix,
    g: &ComplexMatrix,
    c: &[Complex64],
    w: &[Complex64],
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for l in 0..g.rows() {
        let mut gw = Complex64::new(0.0, 0.0);
        for (n, wn) in w.iter().enumerate() {
            gw += g.get(l, n) * wn;
        }
        acc += f.at(l).conj() * c[l] * gw;
    }
    acc
}

fn direct_sum(h: &ComplexMatrix, w: &[Complex64]) -> Complex64 {
    w.iter()
        .enumerate()
        .map(|(n, wn)| h.at(n).conj() * wn)
        .sum()
}

fn oracle(
    ch: &ChannelRealization,
    c: &StarCoefficients,
    w: &[Complex64],
    s: Strategy,
) -> (f64, Vec<f64>, f64) {
    let l = ch.l();
    let beta_r: Vec<f64> = if s == Strategy::IrsOnly {
        vec![1.0; l]
    } else {
        c.beta_r.clone()
    };
    let refl: Vec<Complex64> = (0..l)
        .map(|i| Complex64::from_polar(beta_r[i].sqrt(), c.theta_r[i]))
        .collect();
    let trans = |phases: &[f64]| -> Vec<Complex64> {
        (0..l)
            .map(|i| Complex64::from_polar((1.0 - beta_r[i]).sqrt(), phases[i]))
            .collect()
    };
    let bob = direct_sum(&ch.h_b, w) + surface_sum(&ch.f_b, &ch.g, &refl, w);
    let gamma_b = bob.norm_sqr() / ch.sigma2_b;
    let gamma_k: Vec<f64> = (0..ch.k())
        .map(|k| {
            let d = direct_sum(&ch.h_k[k], w);
            let s2 = ch.sigma2_k[k];
            match s {
                Strategy::An => {
                    let an = surface_sum(&ch.f_k[k], &ch.g, &trans(&c.theta_t_an), w);
                    d.norm_sqr() / (an.norm_sqr() + s2)
                }
                Strategy::Conv => {
                    let info = surface_sum(
                        &ch.f_k[k],
                        &ch.g,
                        &trans(c.theta_t_info.as_ref().unwrap()),
                        w,
                    );
                    (d + info).norm_sqr() / s2
                }
                Strategy::IrsOnly => d.norm_sqr() / s2,
            }
        })
        .collect();
    let eve = gamma_k
        .iter()
        .map(|g| (1.0 + g).log2())
        .fold(f64::NEG_INFINITY, f64::max);
    let rate = ((1.0 + gamma_b).log2() - eve).max(0.0);
    (gamma_b, gamma_k, rate)
}

fn c01_formulas_match_scalar_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst = 0.0f64;
    let mut pass = true;
    for i in 0..1000 {
        let mut scn = ScenarioConfig::desk();
        scn.k = 1 + i % 3;
        scn.n = rng.random_range(1..=6);
        scn.l = rng.random_range(1..=20);
        scn.sigma2_k = vec![scn.sigma2_k[0]; 1];
        let ch = sample_realization(&scn, &mut rng).unwrap();
        let eff = ch.effective().unwrap();
        let l = scn.l;
        let c = StarCoefficients {
            beta_r: (0..l).map(|_| rng.random_range(0.0..=1.0)).collect(),
            theta_r: (0..l).map(|_| rng.random_range(0.0..TAU)).collect(),
            theta_t_an: (0..l).map(|_| rng.random_range(0.0..TAU)).collect(),
            theta_t_info: Some((0..l).map(|_| rng.random_range(0.0..TAU)).collect()),
        };
        let scale = scn.p_max.sqrt() * rng.random_range(0.1..1.0);
        let w: Vec<Complex64> = (0..scn.n)
            .map(|_| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
            })
            .collect();
        let wm = ComplexMatrix::column(&w);
        for s in [Strategy::An, Strategy::Conv, Strategy::IrsOnly] {
            let got = evaluate(&eff, &c, &wm, s).unwrap();
            let (gb, gk, rate) = oracle(&ch, &c, &w, s);
            let pairs = std::iter::once((got.gamma_b, gb))
                .chain(got.gamma_eves.iter().copied().zip(gk))
                .chain(std::iter::once((got.rate, rate)));
            for (a, b) in pairs {
                if a != b {
                    worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
                }
                pass &= rel_close(a, b, 1e-10);
            }
        }
    }
    verdict(
        pass,
        format!("max relative error {worst:.2e} over 1000 instances (tol 1e-10)"),
    )
}

// ---------------------------------------------------------------------------
// 2. Constraint satisfaction of the network outputs

fn c02_forward_passes_satisfy_constraints() -> Verdict {
    let scn = ScenarioConfig::desk();
    let scaling = FeatureScaling::for_scenario(&scn).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let strategies = [Strategy::An, Strategy::Conv, Strategy::IrsOnly];
    let mut failures = 0;
    let mut worst_power = 0.0f64;
    for i in 0..1000u64 {
        let cfg = ModelConfig::new(scn.n, scn.l, strategies[i as usize % 3], scaling);
        let model = GnnModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(SEED + i)).unwrap();
        let ch = sample_realization(&scn, &mut rng)
            .unwrap()
            .effective()
            .unwrap();
        let (bf, c) = model
            .forward(&model.graph(&ch).unwrap(), scn.p_max)
            .unwrap();
        let report = check_constraints(&bf, &c);
        let power_err = (bf.power() - scn.p_max).abs() / scn.p_max;
        worst_power = worst_power.max(power_err);
        let split_exact = c.beta_r.iter().zip(c.beta_t()).all(|(r, t)| r + t == 1.0);
        if !report.all_pass() || power_err > 1e-9 || !split_exact {
            failures += 1;
        }
    }
    verdict(failures == 0,
        format!("{failures} of 1000 forward passes violate C1-C6; worst relative power error {worst_power:.2e}"))
}

// ---------------------------------------------------------------------------
// 3. Autodiff gradients against central differences

fn c03_gradients_match_finite_differences() -> Verdict {
    let mut scn = ScenarioConfig::desk();
    scn.n = 2;
    scn.l = 4;
    scn.k = 1;
    let scaling = FeatureScaling::for_scenario(&scn).unwrap();
    let strategies = [Strategy::An, Strategy::Conv, Strategy::IrsOnly];
    let mut worst = 0.0f64;
    let (mut instances, mut checked, mut excluded) = (0, 0, 0);
    let mut seed = 0u64;
    while instances < 10 {
        seed += 1;
        assert!(seed < 500, "too few instances with strictly positive rates");
        let mut cfg = ModelConfig::new(scn.n, scn.l, strategies[instances % 3], scaling);
        cfg.hidden = 16;
        cfg.phase_head = PhaseHead::Faithful;
        cfg.beam_head = BeamHead::Fc;
        let model = GnnModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(SEED + seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 7000 + seed);
        let batch: Vec<_> = (0..2)
            .map(|_| {
                sample_realization(&scn, &mut rng)
                    .unwrap()
                    .effective()
                    .unwrap()
            })
            .collect();
        let samples = perfect_samples(&model, &batch).unwrap();
        let eval = loss_and_grad(&model, &samples, scn.p_max, LossVariant::Clamped).unwrap();
        // keep away from the [.]^+ kink
        if !eval.rates.iter().all(|r| *r > 1e-3) {
            continue;
        }
        let flat = model.params.flatten();
        let objective = |p: &[f64]| {
            let mut m = model.clone();
            m.params.unflatten(p)?;
            batch_loss(&m, &samples, scn.p_max, LossVariant::Clamped)
        };
        let check = finite_diff_check(objective, &flat, &eval.grad, 1e-3).unwrap();
        worst = worst.max(check.max_rel_error);
        checked += check.checked;
        excluded += check.excluded.len();
        instances += 1;
    }
    verdict(worst < 1e-4,
        format!("max relative error {worst:.2e} over 10 instances, {checked} parameters compared, {excluded} on ReLU kinks (tol 1e-4)"))
}

// ---------------------------------------------------------------------------
// 4. Training curve

fn c04_training_converges() -> Verdict {
    let out = run(ExperimentKind::Convergence, vec![], vec![Scheme::AnGnn]);
    let history = &out.histories[0].2;
    assert_eq!(history.mean_rate.len(), 500);
    // mean over the 50 iterations ending at iteration `t` (one-based)
    let window = |t: usize| history.window_mean(t - 50, t);
    let (w50, w300, w500) = (window(50), window(300), window(500));
    let total = w500 - w50;
    let late = w500 - w300;
    let pass = w500 > w50 && late < 0.2 * total;
    verdict(pass,
        format!("window means it1-50 {w50:.3}, it251-300 {w300:.3}, it451-500 {w500:.3}; late gain {late:.3} vs 20% of {total:.3}"))
}

// ---------------------------------------------------------------------------
// 5-6. Scheme orderings

fn margins(out: &ExperimentOutput, axis: f64, lead: Scheme, others: &[Scheme]) -> (bool, String) {
    let a = out.rates_for(axis, lead, "float").unwrap();
    let mut pass = true;
    let mut parts = vec![format!("{lead} {:.3}", mean(a))];
    for &o in others {
        let b = out.rates_for(axis, o, "float").unwrap();
        let diff = mean(a) - mean(b);
        let se = paired_std_err(a, b).unwrap();
        pass &= diff > 2.0 * se;
        parts.push(format!(
            "{o} {:.3} (diff {diff:.3}, 2se {:.3})",
            mean(b),
            2.0 * se
        ));
    }
    (pass, parts.join(", "))
}

fn c05_artificial_noise_wins_at_high_power() -> Verdict {
    let out = run(ExperimentKind::PowerSweep, vec![30.0], Scheme::GNN.to_vec());
    let (pass, detail) = margins(
        &out,
        30.0,
        Scheme::AnGnn,
        &[Scheme::ConvGnn, Scheme::IrsGnn],
    );
    verdict(pass, &detail)
}

fn c06_gnn_beats_classical_beamformers() -> Verdict {
    let schemes = vec![Scheme::AnGnn, Scheme::AnMrt, Scheme::AnZf, Scheme::AnMmse];
    let out = run(ExperimentKind::BaselineCompare, vec![18.0], schemes);
    let (pass, detail) = margins(
        &out,
        18.0,
        Scheme::AnGnn,
        &[Scheme::AnMrt, Scheme::AnZf, Scheme::AnMmse],
    );
    verdict(pass, &detail)
}

// ---------------------------------------------------------------------------
// 7-9. Sweeps

/// Means along an axis plus, for each step, the paired standard error.
fn trend(out: &ExperimentOutput, axis: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let rates: Vec<&[f64]> = axis
        .iter()
        .map(|v| out.rates_for(*v, Scheme::AnGnn, "float").unwrap())
        .collect();
    let means = rates.iter().map(|r| mean(r)).collect();
    let se = rates
        .windows(2)
        .map(|p| paired_std_err(p[1], p[0]).unwrap())
        .collect();
    (means, se)
}

fn fmt_trend(axis: &[f64], means: &[f64], se: &[f64]) -> String {
    let pts: Vec<String> = axis
        .iter()
        .zip(means)
        .map(|(a, m)| format!("{a}: {m:.3}"))
        .collect();
    let ses: Vec<String> = se.iter().map(|s| format!("{s:.3}")).collect();
    format!("means [{}], step se [{}]", pts.join(", "), ses.join(", "))
}

fn c07_more_eves_do_not_help() -> Verdict {
    let axis = [1.0, 2.0, 3.0];
    let out = run(ExperimentKind::EveSweep, axis.to_vec(), vec![Scheme::AnGnn]);
    let (m, se) = trend(&out, &axis);
    let pass = (0..2).all(|i| m[i + 1] <= m[i] + se[i]);
    verdict(pass, fmt_trend(&axis, &m, &se))
}

fn c08_more_elements_do_not_hurt() -> Verdict {
    let axis = [8.0, 16.0, 32.0];
    let out = run(
        ExperimentKind::ElementSweep,
        axis.to_vec(),
        vec![Scheme::AnGnn],
    );
    let (m, se) = trend(&out, &axis);
    let pass = (0..2).all(|i| m[i + 1] >= m[i] - se[i]);
    verdict(pass, fmt_trend(&axis, &m, &se))
}

fn c09_imperfect_csi_degrades_gracefully() -> Verdict {
    let axis = [0.0, 0.01, 0.05];
    let out = run(ExperimentKind::CsiSweep, axis.to_vec(), vec![Scheme::AnGnn]);
    let (m, se) = trend(&out, &axis);
    let drop = (m[0] - m[2]) / m[0];
    let pass = m[1] <= m[0] && m[2] <= m[1] && drop < 0.5;
    verdict(
        pass,
        format!(
            "{}; relative drop {:.1}%",
            fmt_trend(&axis, &m, &se),
            100.0 * drop
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. Fixed-point inference

fn c10_quantized_inference_tracks_float() -> Verdict {
    let out = run(
        ExperimentKind::Quantization,
        vec![8.0, 24.0],
        vec![Scheme::AnGnn],
    );
    let gap = |frac: f64, variant: &str| {
        let f = mean(out.rates_for(frac, Scheme::AnGnn, "float").unwrap());
        let q = mean(out.rates_for(frac, Scheme::AnGnn, variant).unwrap());
        ((q - f) / f).abs()
    };
    let g16 = gap(8.0, "Q(16,8)");
    let g32 = gap(24.0, "Q(32,24)");
    verdict(
        g16 < 0.02 && g32 < 0.001,
        format!(
            "Q(16,8) gap {:.3}% (tol 2%), Q(32,24) gap {:.4}% (tol 0.1%)",
            100.0 * g16,
            100.0 * g32
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. Reproducibility from the manifest

fn c11_manifest_rerun_is_byte_identical() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("first"), tmp.path().join("second"));
    let mut spec = ExperimentSpec::new(ExperimentKind::PowerSweep, Profile::Desk, SEED);
    spec.axis = vec![18.0, 30.0];
    spec.schemes = vec![Scheme::AnGnn, Scheme::AnZf];
    run_experiment(
        &spec,
        &RunOptions {
            out_dir: Some(a.clone()),
            cache_dir: Some(cache_dir()),
            verbose: false,
        },
    )
    .unwrap();
    let manifest =
        ExperimentSpec::from_json(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    // fresh cache under the second output directory, so every model is retrained
    run_experiment(
        &manifest,
        &RunOptions {
            out_dir: Some(b.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    let first = fs::read(a.join("results.csv")).unwrap();
    let second = fs::read(b.join("results.csv")).unwrap();
    verdict(
        first == second,
        format!(
            "results.csv {} bytes, re-run identical: {}",
            first.len(),
            first == second
        ),
    )
}

type Criterion = (u32, &'static str, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 11] = [
    (
        1,
        "formula_oracle",
        "formula oracle",
        c01_formulas_match_scalar_oracle,
    ),
    (
        2,
        "constraints",
        "constraint satisfaction",
        c02_forward_passes_satisfy_constraints,
    ),
    (
        3,
        "gradients",
        "gradient fidelity",
        c03_gradients_match_finite_differences,
    ),
    (4, "convergence", "convergence", c04_training_converges),
    (
        5,
        "strategy_ordering",
        "strategy ordering at 30 dBm",
        c05_artificial_noise_wins_at_high_power,
    ),
    (
        6,
        "baselines",
        "GNN vs classical beamformers at 18 dBm",
        c06_gnn_beats_classical_beamformers,
    ),
    (
        7,
        "eve_count",
        "Eve-count monotonicity",
        c07_more_eves_do_not_help,
    ),
    (
        8,
        "element_count",
        "element-count monotonicity",
        c08_more_elements_do_not_hurt,
    ),
    (
        9,
        "imperfect_csi",
        "imperfect-CSI robustness",
        c09_imperfect_csi_degrades_gracefully,
    ),
    (
        10,
        "quantized",
        "quantization fidelity",
        c10_quantized_inference_tracks_float,
    ),
    (
        11,
        "determinism",
        "determinism",
        c11_manifest_rerun_is_byte_identical,
    ),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|(_, key, _, _)| {
            filters.is_empty() || filters.iter().any(|f| key.contains(f.as_str()))
        })
        .collect();
    println!("running {} acceptance criteria", selected.len());
    let mut failed = Vec::new();
    for &&(id, _, title, check) in &selected {
        let v = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("acceptance {id:>2} {tag} {title}: {}", v.detail);
        if !v.pass {
            failed.push(id);
        }
    }
    println!(
        "acceptance result: {} passed, {} failed{}",
        selected.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({failed:?})")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
