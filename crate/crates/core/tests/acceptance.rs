//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line and then asserts.
//!
//! Run with `cargo test -p bsa-core --test acceptance -- --nocapture --test-threads=1`
//! to see the lines in order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use bsa_core::deduction::deduce_uncalibrated;
use bsa_core::experiment::{bit_combinations, protocol_settings, run_exact, run_protocol_set, ConfigTag, ExperimentConfig, RunMode};
use bsa_core::fock_optics::{
    click_pattern_probs, coincidence_prob, conditional_coincidence, output_distribution, CoincidenceRule, Detector,
    DetectorModel, DetectorPair, Occupation, PolarizationState,
};
use bsa_core::qkd_analysis::{
    analyze, bootstrap_errors, observable_names, standard_pipeline, visibility, CorrelationTable, Provenance,
    DEFAULT_BOOTSTRAP_TRIALS,
};
use bsa_core::sources::{encode, misalign, Basis, BasisSetting};
use num_complex::Complex64;

/// Mean photon number at the transmitters and the channel loss of the lab run;
/// together they give mu_eff ~ 0.008 at the analyzer.
const MU_SOURCE: f64 = 0.25;
const LOSS_DB: f64 = 15.0;

fn lab_config() -> ExperimentConfig {
    ExperimentConfig::wcp(MU_SOURCE, LOSS_DB)
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id:>2}: {name}: {detail}");
}

fn check_runtime(id: u32, start: Instant, limit: Duration) -> (bool, String) {
    let elapsed = start.elapsed();
    // runtime targets apply to optimized builds; debug builds get 10x headroom
    let limit = if cfg!(debug_assertions) { limit * 10 } else { limit };
    let ok = elapsed <= limit;
    if !ok {
        println!("           criterion {id}: runtime {elapsed:?} exceeds {limit:?}");
    }
    (ok, format!("{:.3}s", elapsed.as_secs_f64()))
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn setting(s: &str) -> BasisSetting {
    s.parse().unwrap()
}

#[test]
fn criterion_01_z_basis_fidelity() {
    let start = Instant::now();
    let recs = run_protocol_set(&lab_config(), &bit_combinations(Basis::Z, Basis::Z)).unwrap();
    let q = analyze(&recs, &CorrelationTable::standard()).unwrap().wcp_raw.unwrap().q_zz.unwrap();
    // equal Z bits must never herald a BSM outcome
    let mut worst = q.abs();
    for (a, b) in bit_combinations(Basis::Z, Basis::Z) {
        if a.bit == b.bit {
            let both = recs.iter().find(|r| r.config_tag == ConfigTag::Both && r.settings() == (a, b)).unwrap();
            worst = worst.max(both.coincidences.bsm_total());
        }
    }
    let (fast, t) = check_runtime(1, start, Duration::from_secs(1));
    let pass = worst <= 1e-12 && fast;
    report(1, "WCP Q_ZZ = 0 at mu_eff=0.008", pass, format!("Q_ZZ = {q:e}, worst equal-bit BSM mass = {worst:e}, {t}"));
    assert!(pass);
}

#[test]
fn criterion_02_wcp_intrinsic_limit() {
    let start = Instant::now();
    let settings: Vec<_> = [bit_combinations(Basis::X, Basis::X), bit_combinations(Basis::Y, Basis::Y)].concat();
    let recs = run_protocol_set(&lab_config(), &settings).unwrap();
    let q = analyze(&recs, &CorrelationTable::standard()).unwrap().wcp_raw.unwrap();
    let (xx, yy) = (q.q_xx.unwrap(), q.q_yy.unwrap());
    let (fast, t) = check_runtime(2, start, Duration::from_secs(1));
    let in_range = |v: f64| (0.245..=0.255).contains(&v);
    let pass = in_range(xx) && in_range(yy) && fast;
    report(2, "WCP Q_XX, Q_YY in [0.245, 0.255]", pass, format!("Q_XX = {xx:.6}, Q_YY = {yy:.6}, {t}"));
    assert!(pass);
}

#[test]
fn criterion_03_deduction_recovery() {
    let start = Instant::now();
    let settings: Vec<_> = [bit_combinations(Basis::X, Basis::X), bit_combinations(Basis::Y, Basis::Y)].concat();
    let recs = run_protocol_set(&lab_config(), &settings).unwrap();
    let ideal = DetectorModel::ideal();
    let mut worst: f64 = 0.0;
    for chunk in recs.chunks(3) {
        let (a, b) = chunk[0].settings();
        let deduced = deduce_uncalibrated(&chunk[0], &chunk[1], &chunk[2]).unwrap().normalized.unwrap();
        let oracle: Vec<f64> = DetectorPair::BSM
            .iter()
            .map(|p| conditional_coincidence(1, &encode(a), 1, &encode(b), &ideal, p.first(), p.second()).unwrap())
            .collect();
        let total: f64 = oracle.iter().sum();
        let tv = 0.5 * DetectorPair::BSM.iter().zip(&oracle).map(|(p, o)| (deduced.get(*p) - o / total).abs()).sum::<f64>();
        worst = worst.max(tv);
    }
    let (fast, t) = check_runtime(3, start, Duration::from_secs(2));
    let pass = worst <= 1e-3 && fast;
    report(3, "deduced X/X, Y/Y BSM vs |1,1> oracle, TV <= 1e-3", pass, format!("max TV = {worst:e}, {t}"));
    assert!(pass);
}

#[test]
fn criterion_04_kappa_independence() {
    let table = CorrelationTable::standard();
    let run = |kappa: [f64; 4]| {
        let mut cfg = lab_config();
        cfg.detector = cfg.detector.with_kappa(kappa).unwrap();
        let recs = run_protocol_set(&cfg, &protocol_settings()).unwrap();
        analyze(&recs, &table).unwrap().deduced.unwrap()
    };
    let unit = run([1.0; 4]);
    let lossy = run([0.9, 0.5, 0.7, 0.6]);
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (a, b) in bsa_core::experiment::PROTOCOL_BASIS_PAIRS {
        let (x, y) = (unit.get(a, b).unwrap(), lossy.get(a, b).unwrap());
        worst = worst.max((x - y).abs());
        details.push(format!("{a}{b}: {:e}", (x - y).abs()));
    }
    let pass = worst <= 1e-6;
    report(4, "deduced QBERs kappa-independent within 1e-6", pass, format!("max diff = {worst:e} ({})", details.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_05_c_values() {
    let start = Instant::now();
    let recs = run_protocol_set(&lab_config(), &protocol_settings()).unwrap();
    let analysis = analyze(&recs, &CorrelationTable::standard()).unwrap();
    let c_wcp = analysis.c(Provenance::WcpRaw).unwrap();
    let c_ded = analysis.c(Provenance::Deduced).unwrap();
    let (fast, t) = check_runtime(5, start, Duration::from_secs(5));
    // 1e-12 absorbs rounding in the (1 - 2Q)^2 sum at the upper edge
    let pass = (c_wcp - 0.5).abs() <= 0.02 && (1.97..=2.0 + 1e-12).contains(&c_ded) && fast;
    report(5, "C(WCP) = 0.5 +- 0.02, C(deduced) in [1.97, 2.0]", pass, format!("C_wcp = {c_wcp:.6}, C_deduced = {c_ded:.9}, {t}"));
    assert!(pass);
}

#[test]
fn criterion_06_beta_sweep() {
    let start = Instant::now();
    let table = CorrelationTable::standard();
    let mut c_wcp = Vec::new();
    let mut c_ded = Vec::new();
    let mut q_wcp = Vec::new();
    let mut q_ded = Vec::new();
    for k in 0..32 {
        let mut cfg = lab_config();
        cfg.beta = 2.0 * PI * k as f64 / 32.0;
        let recs = run_protocol_set(&cfg, &protocol_settings()).unwrap();
        let a = analyze(&recs, &table).unwrap();
        c_wcp.push(a.c(Provenance::WcpRaw).unwrap());
        c_ded.push(a.c(Provenance::Deduced).unwrap());
        q_wcp.push((cfg.beta, a.wcp_raw.as_ref().unwrap().q_xx.unwrap()));
        q_ded.push((cfg.beta, a.deduced.as_ref().unwrap().q_xx.unwrap()));
    }
    let (sd_wcp, sd_ded) = (std_dev(&c_wcp), std_dev(&c_ded));
    let (v_wcp, v_ded) = (visibility(&q_wcp).unwrap(), visibility(&q_ded).unwrap());
    let (fast, t) = check_runtime(6, start, Duration::from_secs(10));
    let invariant = sd_wcp <= 1e-9 && sd_ded <= 1e-9;
    let vis = (v_ded - 1.0).abs() <= 0.01 && (v_wcp - 0.5).abs() <= 0.01;
    let pass = invariant && vis && fast;
    report(
        6,
        "beta sweep: stddev(C) <= 1e-9, V_deduced = 1 +- 0.01, V_wcp = 0.5 +- 0.01",
        pass,
        format!("sd(C_wcp) = {sd_wcp:e}, sd(C_deduced) = {sd_ded:e}, V_deduced = {v_ded:.6}, V_wcp = {v_wcp:.6}, {t}"),
    );
    assert!(vis, "visibilities out of range");
    assert!(invariant, "C varies with beta beyond 1e-9");
    assert!(fast);
}

#[test]
fn criterion_07_mu_sweep() {
    let start = Instant::now();
    let table = CorrelationTable::standard();
    let mut pass = true;
    let mut details = Vec::new();
    for mu in [0.002, 0.008, 0.02, 0.05] {
        let recs = run_protocol_set(&ExperimentConfig::wcp(mu, 0.0), &protocol_settings()).unwrap();
        let a = analyze(&recs, &table).unwrap();
        let (cw, cd) = (a.c(Provenance::WcpRaw).unwrap(), a.c(Provenance::Deduced).unwrap());
        pass &= (1.9..=2.0 + 1e-12).contains(&cd) && (0.48..=0.52).contains(&cw);
        details.push(format!("mu={mu}: C_wcp={cw:.5} C_ded={cd:.6}"));
    }
    let (fast, t) = check_runtime(7, start, Duration::from_secs(10));
    pass &= fast;
    report(7, "mu sweep flatness", pass, format!("{}, {t}", details.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_08_finite_statistics() {
    let start = Instant::now();
    let table = CorrelationTable::standard();
    let exact_recs = run_protocol_set(&lab_config(), &protocol_settings()).unwrap();
    let exact = analyze(&exact_recs, &table).unwrap().observables();

    let mut cfg = lab_config();
    cfg.mode = RunMode::Sampled { pulses: 100_000_000, seed: 2020 };
    let sampled_recs = run_protocol_set(&cfg, &protocol_settings()).unwrap();
    let sampled = analyze(&sampled_recs, &table).unwrap().observables();
    let boot = bootstrap_errors(&sampled_recs, standard_pipeline(&table), DEFAULT_BOOTSTRAP_TRIALS, 7).unwrap();

    let names = observable_names();
    let mut pass = true;
    let mut details = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let is_qber = name.contains(".q_");
        let (Some(e), Some(s)) = (exact[i].1, sampled[i].1) else { continue };
        if !is_qber {
            continue;
        }
        let se = boot.std_errors[i].unwrap_or(0.0);
        let ok = (s - e).abs() <= 3.0 * se;
        pass &= ok;
        details.push(format!("{name}: |{s:.5}-{e:.5}| vs 3*{se:.2e}{}", if ok { "" } else { " !" }));
    }
    let (fast, t) = check_runtime(8, start, Duration::from_secs(30));
    pass &= fast && details.len() == 10;
    report(8, "sampled QBERs within 3 bootstrap SE (1e8 pulses, 1000 trials)", pass, t);
    for d in &details {
        println!("           {d}");
    }
    assert!(pass);
}

/// Brute-force expansion: sums the product of transfer amplitudes over every
/// assignment of photons to detector modes.
fn brute_force_distribution(m: usize, pol_a: &PolarizationState, n: usize, pol_b: &PolarizationState) -> BTreeMap<Occupation, f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (ha, va) = (pol_a.amp_h() * s, pol_a.amp_v() * s);
    let (hb, vb) = (pol_b.amp_h() * s, pol_b.amp_v() * s);
    let u = [ha, va, ha, va];
    let v = [hb, vb, -hb, -vb];
    let total = m + n;
    let mut coeffs: BTreeMap<Occupation, Complex64> = BTreeMap::new();
    for word in 0..4usize.pow(total as u32) {
        let mut occ = [0u8; 4];
        let mut amp = Complex64::new(1.0, 0.0);
        let mut w = word;
        for k in 0..total {
            let mode = w % 4;
            w /= 4;
            occ[mode] += 1;
            amp *= if k < m { u[mode] } else { v[mode] };
        }
        *coeffs.entry(occ).or_insert(Complex64::new(0.0, 0.0)) += amp;
    }
    let fact = |k: usize| (1..=k).map(|x| x as f64).product::<f64>();
    coeffs
        .into_iter()
        .map(|(occ, c)| {
            let occ_fact: f64 = occ.iter().map(|&k| fact(k as usize)).product();
            (occ, c.norm_sqr() * occ_fact / (fact(m) * fact(n)))
        })
        .collect()
}

fn polarization_grid() -> Vec<(PolarizationState, PolarizationState)> {
    let s = |t: &str| encode(setting(t));
    let elliptic = PolarizationState::new(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)).unwrap();
    let tilted = misalign(&s("Y0"), 0.37);
    vec![
        (s("Z0"), s("Z0")),
        (s("Z0"), s("Z1")),
        (s("Z1"), s("Z0")),
        (s("X0"), s("X0")),
        (s("X0"), s("X1")),
        (s("Y0"), s("Y0")),
        (s("Y0"), s("Y1")),
        (s("X0"), s("Y1")),
        (s("Y1"), s("X1")),
        (s("Z0"), s("X1")),
        (elliptic, tilted),
        (tilted, s("Z1")),
    ]
}

#[test]
fn criterion_09_oracle_equivalence() {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (pa, pb) in polarization_grid() {
        for m in 0..=4u32 {
            for n in 0..=(4 - m) {
                let fast = output_distribution(m, &pa, n, &pb).unwrap();
                let brute = brute_force_distribution(m as usize, &pa, n as usize, &pb);
                for (occ, p) in &brute {
                    worst = worst.max((fast.get(occ) - p).abs());
                }
                for (occ, p) in fast.entries() {
                    worst = worst.max((brute.get(occ).copied().unwrap_or(0.0) - p).abs());
                }
                cases += 1;
            }
        }
    }
    let pass = worst <= 1e-10;
    report(9, "output_distribution vs brute-force expansion", pass, format!("{cases} cases, max deviation {worst:e}"));
    assert!(pass);
}

#[test]
fn criterion_10_blocked_arm_closed_form() {
    let mu: f64 = 0.01;
    let ideal = DetectorModel::ideal();
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for label in ["Z0", "Z1", "X0", "Y1"] {
        let pol = encode(setting(label));
        let cfg = ExperimentConfig::wcp(mu, 0.0).with_settings(setting(label), setting(label));
        for tag in [ConfigTag::AOnly, ConfigTag::BOnly] {
            let rec = run_exact(&cfg.with_tag(tag)).unwrap();
            for pair in DetectorPair::ALL {
                let p2 = match tag {
                    ConfigTag::AOnly => conditional_coincidence(2, &pol, 0, &pol, &ideal, pair.first(), pair.second()),
                    _ => conditional_coincidence(0, &pol, 2, &pol, &ideal, pair.first(), pair.second()),
                }
                .unwrap();
                let closed = 0.5 * mu * mu * (-mu).exp() * p2;
                let got = rec.coincidences.get(pair);
                if closed == 0.0 {
                    worst = worst.max(if got == 0.0 { 0.0 } else { f64::INFINITY });
                    continue;
                }
                let rel = (got - closed).abs() / closed;
                worst = worst.max(rel);
                if label == "X0" && tag == ConfigTag::AOnly && pair == DetectorPair::D12 || label == "Z0" && pair == DetectorPair::D13 && tag == ConfigTag::AOnly {
                    details.push(format!("{label} {tag} {pair}: rel {rel:.3e}"));
                }
            }
        }
    }
    let pass = worst <= 1e-4;
    report(10, "blocked-arm rates vs two-photon closed form, 1e-4 relative", pass, format!("max rel = {worst:e} ({})", details.join(", ")));
    assert!(pass);
}

#[test]
fn optics_oracle_sanity() {
    // Not a numbered criterion: ties the pattern layer to a known case.
    let d = output_distribution(1, &encode(setting("X0")), 1, &encode(setting("X0"))).unwrap();
    let clicks = click_pattern_probs(&d, &DetectorModel::ideal());
    let p = coincidence_prob(&clicks, Detector::D1, Detector::D2, CoincidenceRule::Inclusive).unwrap();
    assert!((p - 0.25).abs() < 1e-12);
}
