//! Experiment dispatch: each experiment turns a [`RunConfig`] into a
//! [`ResultTable`]. Sweep points run in parallel and are collected in grid
//! order; a failing point becomes a row carrying its error message.

use std::f64::consts::PI;
use std::time::Instant;

use qwire_core::fock::{
    encode_signals, gamma_norm, ideal_encoded_state, protocol_fidelities, tj_bound_check, tj_interaction_error,
    FockBasis, FockVector, ManyBodyHamiltonian, OracleSchedule, Qubit,
};
use qwire_core::lattice::{
    build_hopping, diagonalize, propagate, transit_time, Lattice, SingleParticleState,
};
use qwire_core::protocol::{
    encoding_error_bound, fit_rate_scaling, min_wait_time, plan_protocol, plan_protocol_with_carrier, WaitStatus,
};
use qwire_core::wavepacket::{
    centroid, fourier_airy_overlap, gaussian_packet, measured_width, overlap, overlap_decay_estimate,
    rescaled_separation, region_weight, ring_displacement, sigma_for_budget, spectral_leakage, width_report,
    Heading, PacketBudget, PacketParams, SiteRange,
};
use qwire_core::WireError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Experiment, RunConfig};
use crate::table::{Cell, ResultTable};

#[derive(Debug, Error)]
#[error("{experiment}: {source}")]
pub struct RunError {
    pub experiment: Experiment,
    #[source]
    pub source: WireError,
}

type Outcome<T> = std::result::Result<T, WireError>;
type WaitPoint = (usize, Outcome<(f64, f64)>);

pub fn run(config: &RunConfig) -> Result<ResultTable, RunError> {
    let start = Instant::now();
    let result = match config.experiment {
        Experiment::Dispersion => dispersion(config),
        Experiment::Packet => packet(config),
        Experiment::Transit => transit(config),
        Experiment::Broadening => broadening(config),
        Experiment::OverlapDecay => overlap_decay(config),
        Experiment::ErrorBudget => error_budget(config),
        Experiment::MinWaitSweep => min_wait_sweep(config),
        Experiment::RateFit => rate_fit(config),
        Experiment::OracleProtocol => oracle_protocol(config),
        Experiment::OracleBounds => oracle_bounds(config),
        Experiment::TjCheck => tj_check(config),
    };
    let mut table = result.map_err(|source| RunError { experiment: config.experiment, source })?;
    table.meta.splice(0..0, config.echo());
    table.defaults_applied = config.defaults_applied.clone();
    table.wall_time_seconds = Some(start.elapsed().as_secs_f64());
    Ok(table)
}

fn budget(config: &RunConfig) -> Outcome<PacketBudget> {
    PacketBudget::new(config.c, config.kappa, config.nu)
}

fn error_cell<T>(r: &Outcome<T>) -> Cell {
    match r {
        Ok(_) => Cell::Text(String::new()),
        Err(e) => Cell::Text(e.to_string()),
    }
}

/// Carrier for rings that may lack a mode at `3N/4`.
fn carrier(config: &RunConfig, n: usize) -> usize {
    if config.k0 != 0 {
        config.k0
    } else {
        (3 * n + 2) / 4
    }
}

fn dispersion(config: &RunConfig) -> Outcome<ResultTable> {
    let lattice = Lattice::new(config.size(), config.boundary)?;
    let spectrum = diagonalize(&build_hopping(lattice))?;
    let mut table = ResultTable::new(&["k", "omega", "velocity"]);
    for k in 1..=lattice.n_sites() {
        let v = spectrum.velocity(k).unwrap_or(f64::NAN);
        table.push(vec![k.into(), spectrum.eigenvalue(k)?.into(), v.into()]);
    }
    Ok(table)
}

fn packet(config: &RunConfig) -> Outcome<ResultTable> {
    let n = config.size();
    let b = budget(config)?;
    let d = sigma_for_budget(n, &b, Heading::Forward)?;
    let params = d.params_at(d.default_center())?;
    let lattice = Lattice::ring(n)?;
    let g = gaussian_packet(&params, &lattice)?;
    let spectrum = diagonalize(&build_hopping(lattice))?;
    let full = d.params_in(params.center, SiteRange::between(1, n)?)?;
    let tail = 1.0 - region_weight(&gaussian_packet(&full, &lattice)?, &params.region);
    let mut table = ResultTable::new(&[
        "N", "sigma_sites", "sigma_phys", "l0", "characteristic_sites", "support_half_width", "center",
        "wavenumber", "region_first", "region_last", "truncated_weight", "spectral_leakage", "cutoff",
        "measured_width",
    ]);
    table.push(vec![
        n.into(),
        d.sigma_sites.into(),
        d.sigma_phys.into(),
        d.l0.into(),
        d.characteristic_sites.into(),
        d.support_half_width.into(),
        params.center.into(),
        params.wavenumber.into(),
        params.region.first().into(),
        params.region.last().into(),
        tail.into(),
        spectral_leakage(&g, &spectrum, params.wavenumber, b.cutoff(n))?.into(),
        b.cutoff(n).into(),
        measured_width(&g).into(),
    ]);
    Ok(table)
}

fn transit(config: &RunConfig) -> Outcome<ResultTable> {
    let n = config.size();
    let b = budget(config)?;
    let d = sigma_for_budget(n, &b, Heading::Forward)?;
    let params = d.params_at(d.default_center())?;
    let lattice = Lattice::ring(n)?;
    let spectrum = diagonalize(&build_hopping(lattice))?;
    let g0 = gaussian_packet(&params, &lattice)?;
    let v = spectrum.velocity(params.wavenumber).expect("ring spectra are analytic");
    let speed_sites = v * n as f64 / (2.0 * PI);
    let start = centroid(&g0);
    let half_ring = n as f64 / 2.0 / speed_sites.abs();
    let mut times: Vec<(f64, &str)> = (0..=20).map(|i| (0.9 * half_ring * i as f64 / 20.0, "")).collect();
    times.push((transit_time(n)?, "paper_transit"));
    times.push((half_ring, "half_ring"));

    let mut table = ResultTable::new(&["t", "label", "displacement_sites", "predicted_sites", "width_sites"]);
    for (t, label) in times {
        let gt = propagate(&g0, t, &spectrum)?;
        let mut shift = ring_displacement(start, centroid(&gt)) * n as f64;
        // a packet exactly half a ring away is reported as moving forward
        if label == "half_ring" && shift < 0.0 {
            shift += n as f64;
        }
        table.push(vec![
            t.into(),
            label.into(),
            shift.into(),
            (speed_sites * t).into(),
            (measured_width(&gt) * n as f64).into(),
        ]);
    }
    Ok(table)
}

fn broadening(config: &RunConfig) -> Outcome<ResultTable> {
    let b = budget(config)?;
    let points: Vec<(usize, Option<f64>)> = config
        .n
        .iter()
        .flat_map(|&n| {
            if config.t.is_empty() {
                vec![(n, None)]
            } else {
                config.t.iter().map(|&t| (n, Some(t))).collect()
            }
        })
        .collect();
    let rows: Vec<Vec<Cell>> = points
        .par_iter()
        .map(|&(n, t)| {
            let result = (|| {
                let t = match t {
                    Some(t) => t,
                    None => transit_time(n)?,
                };
                let d = sigma_for_budget(n, &b, Heading::Forward)?;
                let params = d.params_at(d.default_center())?;
                let lattice = Lattice::ring(n)?;
                let spectrum = diagonalize(&build_hopping(lattice))?;
                Ok((t, width_report(&params, &lattice, &spectrum, t)?))
            })();
            match &result {
                Ok((t, r)) => vec![
                    n.into(),
                    (*t).into(),
                    r.l0.into(),
                    r.lt.into(),
                    r.measured_ratio.into(),
                    r.predicted_ratio.into(),
                    ((r.measured_ratio - r.predicted_ratio).abs() / r.predicted_ratio).into(),
                    error_cell(&result),
                ],
                Err(_) => nan_row(n, 6, error_cell(&result)),
            }
        })
        .collect();
    let mut table = ResultTable::new(&[
        "N", "t", "l0", "lt", "measured_ratio", "predicted_ratio", "relative_error", "error",
    ]);
    rows.into_iter().for_each(|r| table.push(r));
    Ok(table)
}

fn nan_row(n: usize, nans: usize, error: Cell) -> Vec<Cell> {
    let mut row = vec![Cell::from(n)];
    row.extend((0..nans).map(|_| Cell::Float(f64::NAN)));
    row.push(error);
    row
}

fn overlap_decay(config: &RunConfig) -> Outcome<ResultTable> {
    let b = budget(config)?;
    let points: Vec<(usize, f64)> =
        config.n.iter().flat_map(|&n| config.x1.iter().map(move |&x| (n, x))).collect();
    let rows: Vec<Vec<Cell>> = points
        .par_iter()
        .map(|&(n, x1)| {
            let t = 0.5 * x1 * (n as f64).cbrt();
            let result = (|| {
                let d = sigma_for_budget(n, &b, Heading::Forward)?;
                let lattice = Lattice::ring(n)?;
                let spectrum = diagonalize(&build_hopping(lattice))?;
                let g0 = d.packet(&lattice)?;
                let lattice_overlap = overlap(&g0, &propagate(&g0, t, &spectrum)?)?.norm();
                let airy = fourier_airy_overlap(&b, n, t)?.norm();
                Ok((lattice_overlap, airy))
            })();
            let x = t * t * (n as f64).powf(-2.0 / 3.0);
            match &result {
                Ok((lat, airy)) => vec![
                    n.into(),
                    t.into(),
                    x1.into(),
                    x.into(),
                    (*lat).into(),
                    (-lat.ln()).into(),
                    (*airy).into(),
                    overlap_decay_estimate(rescaled_separation(t, n), &b).into(),
                    error_cell(&result),
                ],
                Err(_) => {
                    let mut row = vec![n.into(), t.into(), x1.into(), x.into()];
                    row.extend((0..4).map(|_| Cell::Float(f64::NAN)));
                    row.push(error_cell(&result));
                    row
                }
            }
        })
        .collect();
    let mut table = ResultTable::new(&[
        "N", "t", "x1", "t2_n_m23", "lattice_overlap", "neg_log_overlap", "airy_overlap", "gaussian_estimate",
        "error",
    ]);
    rows.into_iter().for_each(|r| table.push(r));
    Ok(table)
}

fn error_budget(config: &RunConfig) -> Outcome<ResultTable> {
    let n = config.size();
    let plan = plan_protocol(n, config.m, budget(config)?, config.epsilon)?;
    let report = plan.error_report(&plan.spectrum())?;
    let (status, search_bound) = match plan.wait_status {
        WaitStatus::Met => ("met", f64::NAN),
        WaitStatus::BestEffort { bound } => ("best_effort", bound),
    };
    let mut table = ResultTable::new(&[
        "N", "M", "region_size", "region_b_first", "wait", "decode_time", "wait_status", "search_bound", "eps_e",
        "eps_p", "eps_d", "fidelity_bound", "clamped", "cooling_threshold",
    ]);
    table.push(vec![
        n.into(),
        config.m.into(),
        plan.region_a.len().into(),
        plan.region_b.first().into(),
        plan.wait.into(),
        plan.decode_time.into(),
        status.into(),
        search_bound.into(),
        report.eps_e.into(),
        report.eps_p.into(),
        report.eps_d.into(),
        report.fidelity_bound.into(),
        report.clamped.into(),
        plan.cooling_threshold.into(),
    ]);
    Ok(table)
}

fn wait_points(config: &RunConfig) -> Outcome<Vec<WaitPoint>> {
    let b = budget(config)?;
    Ok(config
        .n
        .par_iter()
        .map(|&n| {
            let result = (|| {
                let lattice = Lattice::ring(n)?;
                let spectrum = diagonalize(&build_hopping(lattice))?;
                let t = min_wait_time(n, config.m, &b, config.epsilon, &spectrum)?;
                let g0 = sigma_for_budget(n, &b, Heading::Forward)?.packet(&lattice)?;
                Ok((t, encoding_error_bound(&g0, t, config.m, &spectrum)?))
            })();
            (n, result)
        })
        .collect())
}

fn min_wait_sweep(config: &RunConfig) -> Outcome<ResultTable> {
    let mut table = ResultTable::new(&["N", "t_star", "bound_at_t_star", "t_star_over_cbrt_n", "error"]);
    for (n, result) in wait_points(config)? {
        match &result {
            Ok((t, bound)) => table.push(vec![
                n.into(),
                (*t).into(),
                (*bound).into(),
                (t / (n as f64).cbrt()).into(),
                error_cell(&result),
            ]),
            Err(_) => table.push(nan_row(n, 3, error_cell(&result))),
        }
    }
    Ok(table)
}

fn rate_fit(config: &RunConfig) -> Outcome<ResultTable> {
    let points = wait_points(config)?;
    let failed = points.iter().filter(|(_, r)| r.is_err()).count();
    let samples: Vec<(usize, f64)> = points.iter().filter_map(|(n, r)| r.as_ref().ok().map(|(t, _)| (*n, *t))).collect();
    let fit = fit_rate_scaling(&samples)?;
    let mut table = ResultTable::new(&["exponent", "intercept", "r_squared", "samples", "failed_points"]);
    table.push(vec![
        fit.exponent.into(),
        fit.intercept.into(),
        fit.r_squared.into(),
        samples.len().into(),
        failed.into(),
    ]);
    Ok(table)
}

fn oracle_protocol(config: &RunConfig) -> Outcome<ResultTable> {
    let n = config.size();
    let m = config.m;
    let mut plan = plan_protocol_with_carrier(n, m, budget(config)?, config.epsilon, carrier(config, n))?;
    if let Some(&t) = config.t.first() {
        plan.wait = t;
    }
    let spectrum = plan.spectrum();
    let report = plan.error_report(&spectrum)?;
    let ham = ManyBodyHamiltonian::tight_binding(plan.lattice(), FockBasis::new(n, m)?)?;
    let mut schedule = OracleSchedule::from_plan(&plan, &spectrum)?;
    let corrected = protocol_fidelities(m, &schedule, &ham)?;
    schedule.sign_correction = false;
    let raw = protocol_fidelities(m, &schedule, &ham)?;
    let mut table = ResultTable::new(&[
        "beta", "fidelity", "fidelity_without_sign_correction", "eps_e", "eps_p", "eps_d", "fidelity_bound",
        "satisfied", "wait", "decode_time",
    ]);
    for beta in 0..m {
        table.push(vec![
            (beta + 1).into(),
            corrected[beta].into(),
            raw[beta].into(),
            report.eps_e.into(),
            report.eps_p.into(),
            report.eps_d.into(),
            report.fidelity_bound.into(),
            (corrected[beta] >= report.fidelity_bound - 1e-6).into(),
            plan.wait.into(),
            plan.decode_time.into(),
        ]);
    }
    Ok(table)
}

/// Packet on the left part of a small ring, used by the oracle sweeps.
pub fn oracle_packet(n: usize, sigma: f64, k0: usize) -> Outcome<PacketParams> {
    let size = n.div_ceil(2).saturating_sub(1).max(1);
    let params = PacketParams {
        sigma_sites: sigma,
        center: ((1 + size) as f64 / 2.0).round() as usize,
        wavenumber: k0,
        region: SiteRange::new(1, size)?,
    };
    params.validate(n)?;
    Ok(params)
}

fn random_qubit(rng: &mut ChaCha8Rng) -> Qubit {
    let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Qubit::new(
        num_complex::Complex64::new(v[0] / norm, v[1] / norm),
        num_complex::Complex64::new(v[2] / norm, v[3] / norm),
    )
    .expect("normalized by construction")
}

fn point_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn oracle_bounds(config: &RunConfig) -> Outcome<ResultTable> {
    let n = config.size();
    let m = config.m;
    let lattice = Lattice::ring(n)?;
    let ham = ManyBodyHamiltonian::tight_binding(lattice, FockBasis::new(n, m)?)?;
    let spectrum = ham.spectrum()?;
    let k0 = carrier(config, n);
    let points: Vec<(f64, f64)> =
        config.sigma.iter().flat_map(|&s| config.t.iter().map(move |&t| (s, t))).collect();
    let rows: Vec<Vec<Cell>> = points
        .par_iter()
        .enumerate()
        .map(|(i, &(sigma, t))| {
            let result = (|| {
                let g = gaussian_packet(&oracle_packet(n, sigma, k0)?, &lattice)?;
                let mut rng = point_rng(config.seed, i);
                let msgs: Vec<Qubit> = (0..m).map(|_| random_qubit(&mut rng)).collect();
                let gamma = gamma_norm(
                    &encode_signals(&msgs, &g, t, &ham)?,
                    &ideal_encoded_state(&msgs, &g, t, &ham)?,
                )?;
                Ok((gamma, encoding_error_bound(&g, t, m, &spectrum)?))
            })();
            match &result {
                Ok((gamma, bound)) => vec![
                    sigma.into(),
                    t.into(),
                    (*gamma).into(),
                    (*bound).into(),
                    (*gamma <= bound + 1e-8).into(),
                    error_cell(&result),
                ],
                Err(_) => vec![
                    sigma.into(),
                    t.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    false.into(),
                    error_cell(&result),
                ],
            }
        })
        .collect();
    let mut table = ResultTable::new(&["sigma", "t", "gamma_norm", "bound", "satisfied", "error"]);
    rows.into_iter().for_each(|r| table.push(r));
    Ok(table)
}

/// Normalized two-packet state `a†(g(t))a†(g(0))|Ω⟩` and the state left by
/// two protocol encodings of `|1⟩`.
fn tj_states(g: &SingleParticleState, t: f64, ham: &ManyBodyHamiltonian) -> Outcome<Vec<(&'static str, FockVector)>> {
    let spectrum = ham.spectrum()?;
    let moved = propagate(g, t, &spectrum)?;
    let pair = FockVector::from_modes(ham.basis(), &[g.clone(), moved])?;
    let norm = pair.norm();
    if !(norm > 1e-12) {
        return Err(WireError::DegeneratePacket("coinciding packets have no two-particle state".into()));
    }
    let pair = FockVector::from_fock(pair.amplitudes().iter().map(|a| a / norm).collect());
    let encoded = encode_signals(&[Qubit::one(), Qubit::one()], g, t, ham)?;
    Ok(vec![("modes", pair), ("protocol", encoded)])
}

fn tj_check(config: &RunConfig) -> Outcome<ResultTable> {
    let n = config.size();
    let lattice = Lattice::ring(n)?;
    let basis = FockBasis::new(n, 2)?;
    let free = ManyBodyHamiltonian::tight_binding(lattice, basis.clone())?;
    let interacting = ManyBodyHamiltonian::t_j(lattice, basis, 1.0, config.j)?;
    let k0 = carrier(config, n);
    let mut table = ResultTable::new(&[
        "state", "sigma", "t", "s", "eps_i", "difference", "bound", "violated", "error",
    ]);
    let points: Vec<(f64, f64)> =
        config.sigma.iter().flat_map(|&s| config.t.iter().map(move |&t| (s, t))).collect();
    let blocks: Vec<Vec<Vec<Cell>>> = points
        .par_iter()
        .map(|&(sigma, t)| {
            let result = (|| {
                let g = gaussian_packet(&oracle_packet(n, sigma, k0)?, &lattice)?;
                let mut rows = Vec::new();
                for (kind, state) in tj_states(&g, t, &free)? {
                    let eps_i = tj_interaction_error(&state, &interacting)?;
                    for &s in &config.s {
                        let c = tj_bound_check(&state, s, &free, &interacting, 1e-6)?;
                        rows.push(vec![
                            kind.into(),
                            sigma.into(),
                            t.into(),
                            s.into(),
                            eps_i.into(),
                            c.difference.into(),
                            c.bound.into(),
                            c.violated.into(),
                            "".into(),
                        ]);
                    }
                }
                Ok(rows)
            })();
            match result {
                Ok(rows) => rows,
                Err(e) => vec![vec![
                    "".into(),
                    sigma.into(),
                    t.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    false.into(),
                    Cell::Text(WireError::to_string(&e)),
                ]],
            }
        })
        .collect();
    blocks.into_iter().flatten().for_each(|r| table.push(r));
    Ok(table)
}
