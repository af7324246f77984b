//! End-to-end acceptance checks. Each test prints a single `PASS` or `FAIL`
//! line with the measured quantities and then asserts the outcome.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use qwire_core::fock::{
    average_fidelity, encode_signals, evolution_difference, gamma_norm, ideal_encoded_state, protocol_fidelities,
    reduced_qubit, run_protocol, tj_interaction_error, AxisState, FockBasis, FockVector, ManyBodyHamiltonian,
    OracleSchedule, Qubit, QubitState, Register,
};
use qwire_core::lattice::{build_hopping, diagonalize, propagate, transit_time, Lattice, SingleParticleState};
use qwire_core::protocol::{
    encoding_error_bound, fit_rate_scaling, min_wait_time, plan_protocol, plan_protocol_with_carrier,
};
use qwire_core::wavepacket::{
    centroid, fourier_airy_overlap, gaussian_packet, measured_width, overlap, ring_displacement, sigma_for_budget,
    width_report, Heading, PacketBudget, PacketParams, SiteRange,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn verdict(id: u32, title: &str, pass: bool, elapsed: Duration, limit: Duration, detail: String) {
    let in_time = elapsed <= limit;
    let status = if pass && in_time { "PASS" } else { "FAIL" };
    println!(
        "{status} criterion {id:>2} [{title}] {detail}; runtime {:.2}s (limit {}s)",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(in_time, "criterion {id} exceeded its runtime limit");
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> SingleParticleState {
    let amps = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    SingleParticleState::normalized(amps).unwrap()
}

fn random_qubit(rng: &mut ChaCha8Rng) -> Qubit {
    let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Qubit::new(Complex64::new(v[0] / norm, v[1] / norm), Complex64::new(v[2] / norm, v[3] / norm)).unwrap()
}

fn small_ring_packet(n: usize, sigma: f64) -> PacketParams {
    let size = n.div_ceil(2) - 1;
    PacketParams {
        sigma_sites: sigma,
        center: ((1 + size) as f64 / 2.0).round() as usize,
        wavenumber: (3 * n + 2) / 4,
        region: SiteRange::new(1, size).unwrap(),
    }
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (slope, intercept, 1.0 - ss_res / ss_tot)
}

#[test]
fn criterion_01_spectral_matches_dense_propagator() {
    let start = Instant::now();
    let n = 8;
    let t = 3.7;
    let h = build_hopping(Lattice::ring(n).unwrap());
    let spectrum = diagonalize(&h).unwrap();
    let eig = h.entries().clone().symmetric_eigen();
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&w| Complex64::from_polar(1.0, -w * t)),
    ));
    let v = eig.eigenvectors.map(Complex64::from);
    let u = &v * phases * v.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let psi = random_state(n, &mut rng);
        let dense = &u * DVector::from_column_slice(psi.amplitudes());
        let fast = propagate(&psi, t, &spectrum).unwrap();
        for (a, b) in fast.amplitudes().iter().zip(dense.iter()) {
            worst = worst.max((a - b).norm());
        }
    }
    verdict(
        1,
        "spectral vs dense propagator",
        worst < 1e-8,
        start.elapsed(),
        Duration::from_secs(1),
        format!("max componentwise difference {worst:.3e} (< 1e-8)"),
    );
}

#[test]
fn criterion_02_group_velocity() {
    let start = Instant::now();
    let n = 1024;
    let budget = PacketBudget::new(9.0, 1.0, 2.0).unwrap();
    let lattice = Lattice::ring(n).unwrap();
    let spectrum = diagonalize(&build_hopping(lattice)).unwrap();
    let g0 = sigma_for_budget(n, &budget, Heading::Forward).unwrap().packet(&lattice).unwrap();
    let t = transit_time(n).unwrap() / 4.0;
    let gt = propagate(&g0, t, &spectrum).unwrap();
    let speed = 2.0 * PI * ring_displacement(centroid(&g0), centroid(&gt)).abs() / t;
    let expected = 4.0 * PI / n as f64;
    let rel = (speed - expected).abs() / expected;
    verdict(
        2,
        "group velocity",
        rel <= 0.03,
        start.elapsed(),
        Duration::from_secs(10),
        format!("centroid speed {speed:.6e} vs 4pi/N = {expected:.6e}, relative deviation {rel:.4} (<= 0.03)"),
    );
}

#[test]
fn criterion_03_transit_time() {
    let start = Instant::now();
    let n = 1024;
    let plan = plan_protocol(n, 4, PacketBudget::default(), 0.01).unwrap();
    let spectrum = plan.spectrum();
    let g0 = plan.initial_packet().unwrap();
    let t = transit_time(n).unwrap();
    let gt = propagate(&g0, t, &spectrum).unwrap();
    let target = plan.region_b.center() / n as f64;
    let miss = ring_displacement(target, centroid(&gt)).abs();
    let tolerance = 2.0 * measured_width(&g0);
    verdict(
        3,
        "transit time",
        miss <= tolerance,
        start.elapsed(),
        Duration::from_secs(10),
        format!(
            "at T = N/(8pi) = {t:.3} the centroid is {miss:.4} ring lengths from the centre of Bob's region \
             (tolerance 2 L(0) = {tolerance:.4})"
        ),
    );
}

#[test]
fn criterion_04_broadening() {
    let start = Instant::now();
    let budget = PacketBudget::default();
    let reports: Vec<_> = [512usize, 2048]
        .iter()
        .map(|&n| {
            let lattice = Lattice::ring(n).unwrap();
            let spectrum = diagonalize(&build_hopping(lattice)).unwrap();
            let d = sigma_for_budget(n, &budget, Heading::Forward).unwrap();
            let params = d.params_at(d.default_center()).unwrap();
            width_report(&params, &lattice, &spectrum, transit_time(n).unwrap()).unwrap()
        })
        .collect();
    let errors: Vec<f64> =
        reports.iter().map(|r| (r.measured_ratio - r.predicted_ratio).abs() / r.predicted_ratio).collect();
    let spread = (reports[0].measured_ratio - reports[1].measured_ratio).abs()
        / reports[0].measured_ratio.min(reports[1].measured_ratio);
    let pass = errors.iter().all(|&e| e <= 0.15) && spread <= 0.10;
    verdict(
        4,
        "third-order broadening",
        pass,
        start.elapsed(),
        Duration::from_secs(30),
        format!(
            "measured/predicted ratios N=512: {:.5}/{:.5}, N=2048: {:.5}/{:.5}; relative errors {:.4}, {:.4} \
             (<= 0.15); cross-N spread {spread:.4} (<= 0.10)",
            reports[0].measured_ratio,
            reports[0].predicted_ratio,
            reports[1].measured_ratio,
            reports[1].predicted_ratio,
            errors[0],
            errors[1]
        ),
    );
}

#[test]
fn criterion_05_overlap_decay_scaling() {
    let start = Instant::now();
    let budget = PacketBudget::default();
    let x1s: Vec<f64> = (2..=8).map(|i| i as f64 * 0.5).collect();
    let points: Vec<(f64, f64)> = [512usize, 1024, 2048, 4096]
        .par_iter()
        .flat_map_iter(|&n| {
            let lattice = Lattice::ring(n).unwrap();
            let spectrum = diagonalize(&build_hopping(lattice)).unwrap();
            let g0 = sigma_for_budget(n, &budget, Heading::Forward).unwrap().packet(&lattice).unwrap();
            x1s.iter()
                .map(|&x1| {
                    let t = 0.5 * x1 * (n as f64).cbrt();
                    let o = overlap(&g0, &propagate(&g0, t, &spectrum).unwrap()).unwrap().norm();
                    (t * t * (n as f64).powf(-2.0 / 3.0), -o.ln())
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    verdict(
        5,
        "overlap decay scaling",
        r2 >= 0.95,
        start.elapsed(),
        Duration::from_secs(120),
        format!("-log|<g(0)|g(t)>| = {slope:.4} x + {intercept:.4} over {} points, R^2 = {r2:.5} (>= 0.95)", xs.len()),
    );
}

#[test]
fn criterion_06_encoding_error_bound() {
    let start = Instant::now();
    let n = 10;
    let lattice = Lattice::ring(n).unwrap();
    let spectrum = diagonalize(&build_hopping(lattice)).unwrap();
    let grid: Vec<(usize, f64, f64)> = [2usize, 3]
        .iter()
        .flat_map(|&m| {
            [0.8, 1.2, 1.8, 2.5]
                .into_iter()
                .flat_map(move |s| [0.0, 0.5, 1.0, 1.5, 2.0].into_iter().map(move |t| (m, s, t)))
        })
        .collect();
    let hams: BTreeMap<usize, ManyBodyHamiltonian> = [2usize, 3]
        .iter()
        .map(|&m| (m, ManyBodyHamiltonian::tight_binding(lattice, FockBasis::new(n, m).unwrap()).unwrap()))
        .collect();
    let results: Vec<(f64, f64)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &(m, sigma, t))| {
            let g = gaussian_packet(&small_ring_packet(n, sigma), &lattice).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(600 + i as u64);
            let msgs: Vec<Qubit> = (0..m).map(|_| random_qubit(&mut rng)).collect();
            let ham = &hams[&m];
            let gamma = gamma_norm(
                &encode_signals(&msgs, &g, t, ham).unwrap(),
                &ideal_encoded_state(&msgs, &g, t, ham).unwrap(),
            )
            .unwrap();
            (gamma, encoding_error_bound(&g, t, m, &spectrum).unwrap())
        })
        .collect();
    let violations = results.iter().filter(|(g, b)| *g > b + 1e-8).count();
    let tightest = results.iter().map(|(g, b)| b - g).fold(f64::INFINITY, f64::min);
    verdict(
        6,
        "orthogonal error bound",
        violations == 0,
        start.elapsed(),
        Duration::from_secs(120),
        format!(
            "{} grid points (20 per M in {{2, 3}}), {violations} violations, smallest margin bound - |Gamma| = {tightest:.4e}",
            results.len()
        ),
    );
}

#[test]
fn criterion_07_fidelity_lower_bound() {
    let start = Instant::now();
    let budget = PacketBudget::new(9.0, 1.0, 1.5).unwrap();
    let cases: Vec<(usize, usize)> = [8usize, 10, 12].iter().flat_map(|&n| (1..=3).map(move |m| (n, m))).collect();
    let outcomes: Vec<(usize, usize, f64, f64)> = cases
        .par_iter()
        .map(|&(n, m)| {
            let plan = plan_protocol_with_carrier(n, m, budget, 0.01, (3 * n + 2) / 4).unwrap();
            let spectrum = plan.spectrum();
            let bound = plan.error_report(&spectrum).unwrap().fidelity_bound;
            let ham = ManyBodyHamiltonian::tight_binding(plan.lattice(), FockBasis::new(n, m).unwrap()).unwrap();
            let schedule = OracleSchedule::from_plan(&plan, &spectrum).unwrap();
            let worst = protocol_fidelities(m, &schedule, &ham).unwrap().into_iter().fold(f64::INFINITY, f64::min);
            (n, m, worst, bound)
        })
        .collect();
    let failures: Vec<_> = outcomes.iter().filter(|(_, _, f, b)| *f < b - 1e-6).collect();
    let summary: Vec<String> =
        outcomes.iter().map(|(n, m, f, b)| format!("N={n} M={m}: F={f:.4} >= {b:.4}")).collect();
    verdict(
        7,
        "fidelity lower bound",
        failures.is_empty(),
        start.elapsed(),
        Duration::from_secs(300),
        format!("{}; {} failures", summary.join(", "), failures.len()),
    );
}

#[test]
fn criterion_08_truncation_equivalence() {
    let start = Instant::now();
    let n = 8;
    let m = 2;
    let lattice = Lattice::ring(n).unwrap();
    let small = ManyBodyHamiltonian::tight_binding(lattice, FockBasis::new(n, m).unwrap()).unwrap();
    let full = ManyBodyHamiltonian::tight_binding(lattice, FockBasis::new(n, n).unwrap()).unwrap();
    let schedule = OracleSchedule {
        wait: 0.9,
        decode_time: 1.3,
        encode_mode: gaussian_packet(&small_ring_packet(n, 1.1), &lattice).unwrap(),
        decode_mode: gaussian_packet(
            &PacketParams {
                sigma_sites: 1.1,
                center: 6,
                wavenumber: 6,
                region: SiteRange::new(5, 3).unwrap(),
            },
            &lattice,
        )
        .unwrap(),
        sign_correction: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let msgs: Vec<Qubit> = (0..m).map(|_| random_qubit(&mut rng)).collect();
    let a = run_protocol(&msgs, &schedule, &small).unwrap();
    let b = run_protocol(&msgs, &schedule, &full).unwrap();
    let mut worst = 0.0f64;
    for config in 0..a.n_configs() {
        let mut mapped = vec![Complex64::new(0.0, 0.0); full.basis().dim()];
        for (i, amp) in a.slice(config).iter().enumerate() {
            mapped[full.basis().index_of(small.basis().state(i)).unwrap()] = *amp;
        }
        for (x, y) in mapped.iter().zip(b.slice(config)) {
            worst = worst.max((x - y).norm());
        }
    }
    verdict(
        8,
        "truncated vs full Fock space",
        worst <= 1e-10 && b.fock_dim() == 1 << n,
        start.elapsed(),
        Duration::from_secs(60),
        format!("full space dimension {}, max componentwise difference {worst:.3e} (<= 1e-10)", b.fock_dim()),
    );
}

#[test]
fn criterion_09_tj_interaction() {
    let start = Instant::now();
    let n = 10;
    let lattice = Lattice::ring(n).unwrap();
    let basis = FockBasis::new(n, 2).unwrap();
    let free = ManyBodyHamiltonian::tight_binding(lattice, basis.clone()).unwrap();
    let interacting = ManyBodyHamiltonian::t_j(lattice, basis.clone(), 1.0, 1.0).unwrap();
    let spectrum = free.spectrum().unwrap();
    let mut rows = Vec::new();
    for sigma in [0.8, 1.0, 1.4] {
        let g = gaussian_packet(&small_ring_packet(n, sigma), &lattice).unwrap();
        for t in [1.0, 2.0, 3.0] {
            let pair = FockVector::from_modes(&basis, &[g.clone(), propagate(&g, t, &spectrum).unwrap()]).unwrap();
            let norm = pair.norm();
            let pair = FockVector::from_fock(pair.amplitudes().iter().map(|a| a / norm).collect());
            let eps_i = tj_interaction_error(&pair, &interacting).unwrap();
            for s in [0.1, 0.5, 1.0] {
                let diff = evolution_difference(&pair, s, &free, &interacting).unwrap();
                rows.push((sigma, t, s, diff, s * eps_i));
            }
        }
    }
    let violations: Vec<String> = rows
        .iter()
        .filter(|r| r.3 > r.4 + 1e-6)
        .map(|(sigma, t, s, d, b)| format!("sigma={sigma} t={t} s={s}: {d:.4e} > {b:.4e}"))
        .collect();
    let worst_ratio = rows.iter().map(|r| r.3 / r.4).fold(0.0f64, f64::max);
    verdict(
        9,
        "t-J interaction error",
        violations.is_empty(),
        start.elapsed(),
        Duration::from_secs(60),
        format!(
            "{} configurations, largest difference/bound {worst_ratio:.4}, violations: [{}]",
            rows.len(),
            violations.join("; ")
        ),
    );
}

#[test]
fn criterion_10_headline_scaling() {
    let start = Instant::now();
    let budget = PacketBudget::default();
    let samples: Vec<(usize, f64)> = (8..=13)
        .into_par_iter()
        .map(|p| {
            let n = 1usize << p;
            let spectrum = diagonalize(&build_hopping(Lattice::ring(n).unwrap())).unwrap();
            (n, min_wait_time(n, 4, &budget, 0.01, &spectrum).unwrap())
        })
        .collect();
    let fit = fit_rate_scaling(&samples).unwrap();
    verdict(
        10,
        "minimal wait scaling",
        (0.26..=0.40).contains(&fit.exponent) && fit.r_squared >= 0.9,
        start.elapsed(),
        Duration::from_secs(600),
        format!("t* ~ N^{:.4} with R^2 = {:.5} (exponent in [0.26, 0.40], R^2 >= 0.9)", fit.exponent, fit.r_squared),
    );
}

type Channel<'a> = &'a (dyn Fn(&Qubit) -> QubitState + Sync);

fn haar_average(channel: Channel, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Qubit> = (0..10_000).map(|_| random_qubit(&mut rng)).collect();
    let samples: Vec<f64> = inputs.par_iter().map(|q| channel(q).fidelity_with(q)).collect();
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

#[test]
fn criterion_11_two_design_average() {
    let start = Instant::now();
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let damping = |q: &Qubit| {
        let g = 0.3f64;
        let rho = QubitState::pure(q).rho().clone_owned();
        let out = nalgebra::Matrix2::new(
            rho[(0, 0)] + rho[(1, 1)] * g,
            rho[(0, 1)] * (1.0 - g).sqrt(),
            rho[(1, 0)] * (1.0 - g).sqrt(),
            rho[(1, 1)] * (1.0 - g),
        );
        QubitState::new(out).unwrap()
    };
    let dephasing = |q: &Qubit| {
        let rho = QubitState::pure(q).rho().clone_owned();
        let mut out = rho;
        out[(0, 1)] *= c(0.35, 0.25);
        out[(1, 0)] *= c(0.35, -0.25);
        QubitState::new(out).unwrap()
    };
    let n = 8;
    let lattice = Lattice::ring(n).unwrap();
    let ham = ManyBodyHamiltonian::tight_binding(lattice, FockBasis::new(n, 1).unwrap()).unwrap();
    let schedule = OracleSchedule {
        wait: 1.0,
        decode_time: 1.6,
        encode_mode: gaussian_packet(&small_ring_packet(n, 1.0), &lattice).unwrap(),
        decode_mode: gaussian_packet(
            &PacketParams { sigma_sites: 1.0, center: 6, wavenumber: 6, region: SiteRange::new(5, 3).unwrap() },
            &lattice,
        )
        .unwrap(),
        sign_correction: true,
    };
    let wire = |q: &Qubit| reduced_qubit(&run_protocol(&[*q], &schedule, &ham).unwrap(), Register::Bob(1)).unwrap();

    let channels: [(&str, Channel); 3] =
        [("amplitude damping", &damping), ("phase damping", &dephasing), ("N=8 wire", &wire)];
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, (name, channel)) in channels.iter().enumerate() {
        let outputs: BTreeMap<_, _> = AxisState::ALL.iter().map(|&a| (a, channel(&a.qubit()))).collect();
        let design = average_fidelity(&outputs).unwrap();
        let (mean, stderr) = haar_average(*channel, 1100 + i as u64);
        let ok = (mean - design).abs() <= 3.0 * stderr;
        pass &= ok;
        lines.push(format!("{name}: design {design:.5}, Haar {mean:.5} +/- {stderr:.1e}"));
    }
    verdict(
        11,
        "2-design average fidelity",
        pass,
        start.elapsed(),
        Duration::from_secs(60),
        format!("{} (agreement within 3 standard errors)", lines.join(", ")),
    );
}

#[test]
fn criterion_12_fourier_airy_quadrature() {
    let start = Instant::now();
    let n = 1024;
    let budget = PacketBudget::default();
    let lattice = Lattice::ring(n).unwrap();
    let spectrum = diagonalize(&build_hopping(lattice)).unwrap();
    let g0 = sigma_for_budget(n, &budget, Heading::Forward).unwrap().packet(&lattice).unwrap();
    let mut lines = Vec::new();
    let mut worst = 0.0f64;
    for x1 in [1.0, 2.0, 4.0] {
        let t = 0.5 * x1 * (n as f64).cbrt();
        let lattice_value = overlap(&g0, &propagate(&g0, t, &spectrum).unwrap()).unwrap().norm();
        let airy = fourier_airy_overlap(&budget, n, t).unwrap().norm();
        let rel = (airy - lattice_value).abs() / lattice_value;
        worst = worst.max(rel);
        lines.push(format!("x1={x1}: lattice {lattice_value:.5e}, quadrature {airy:.5e}"));
    }
    verdict(
        12,
        "Fourier-Airy quadrature",
        worst <= 0.05,
        start.elapsed(),
        Duration::from_secs(30),
        format!("{}; worst relative error {worst:.4} (<= 0.05)", lines.join(", ")),
    );
}
