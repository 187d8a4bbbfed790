//! Synthetic panel generator with known ground truth.
//!
//! The data-generating process mirrors the identification problem of the
//! wage regressions. Vacancies carry a national occupation-by-year demand
//! shock (eta) plus local demand noise; job seekers carry a national
//! supply shock (kappa) plus local supply noise. Tightness is their ratio.
//! Worker log wages respond to log tightness with elasticity `alpha_true`,
//! and two contamination channels can be switched on:
//!
//! * `rho` > 0: the market wage disturbance feeds back negatively into log
//!   tightness, biasing OLS downward while leave-one-out instruments stay
//!   valid;
//! * `delta` > 0: the national demand shock enters wages directly, which
//!   contaminates the leave-one-out instruments upward until the
//!   leave-one-out vacancy-sum control soaks up the demand-side variation.
//!
//! Markets generate on disjoint RNG streams, so output is reproducible and
//! independent of parallel scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Education, Gender, Nationality, WorkerSpell};
use crate::error::{Error, Result};
use crate::par;
use crate::tightness::{CellFlag, MarketCell};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Elasticity of log wages in log tightness.
    pub alpha_true: f64,
    /// Reverse-causality feedback: the market wage shock depresses log
    /// tightness by rho x shock.
    pub rho: f64,
    /// National-shock passthrough: the demand shock eta enters wages with
    /// this coefficient, violating instrument exogeneity when positive.
    pub delta: f64,
    pub n_occupations: usize,
    pub n_regions: usize,
    pub n_years: usize,
    pub workers_per_market: usize,
    pub seed: u64,

    /// Base tightness level and its log-linear yearly trend.
    pub theta_base: f64,
    pub trend: f64,
    /// Mean job-seeker count per market cell.
    pub mean_seekers: f64,

    // standard deviations of the DGP components
    pub sd_market_theta: f64,
    pub sd_market_size: f64,
    pub sd_national_demand: f64,
    pub sd_national_supply: f64,
    pub sd_local_demand: f64,
    pub sd_local_supply: f64,
    pub sd_market_wage: f64,
    pub sd_worker: f64,
    pub sd_firm: f64,
    pub sd_year: f64,
    pub sd_individual: f64,

    /// Log-wage penalty for new hires (a time-varying control).
    pub hire_effect: f64,
    /// Yearly probability that a worker switches firms within the market.
    pub move_prob: f64,
    pub first_year: i32,
    /// Base daily wage in EUR anchoring the log-wage level.
    pub base_wage: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            alpha_true: 0.011,
            rho: 0.0,
            delta: 0.0,
            n_occupations: 200,
            n_regions: 10,
            n_years: 11,
            workers_per_market: 50,
            seed: 1,
            theta_base: 0.24,
            trend: 0.08,
            mean_seekers: 150.0,
            sd_market_theta: 0.20,
            sd_market_size: 0.30,
            sd_national_demand: 0.15,
            sd_national_supply: 0.15,
            sd_local_demand: 0.12,
            sd_local_supply: 0.12,
            sd_market_wage: 0.031,
            sd_worker: 0.30,
            sd_firm: 0.10,
            sd_year: 0.02,
            sd_individual: 0.15,
            hire_effect: -0.03,
            move_prob: 0.10,
            first_year: 2012,
            base_wage: 106.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_occupations < 2 {
            return Err(Error::validation("need at least 2 occupations"));
        }
        if self.n_regions < 3 {
            return Err(Error::validation(
                "need at least 3 regions so leave-one-out sets have 2 donors",
            ));
        }
        if self.n_years < 2 {
            return Err(Error::validation("need at least 2 years"));
        }
        if self.workers_per_market == 0 {
            return Err(Error::validation("need at least 1 worker per market"));
        }
        if self.rho < 0.0 || self.delta < 0.0 {
            return Err(Error::validation("rho and delta must be nonnegative"));
        }
        let sds = [
            self.sd_market_theta,
            self.sd_market_size,
            self.sd_national_demand,
            self.sd_national_supply,
            self.sd_local_demand,
            self.sd_local_supply,
            self.sd_market_wage,
            self.sd_worker,
            self.sd_firm,
            self.sd_year,
            self.sd_individual,
        ];
        if sds.iter().any(|s| *s < 0.0) {
            return Err(Error::validation("standard deviations must be nonnegative"));
        }
        Ok(())
    }

    /// District code of a region (regions double as districts).
    pub fn district(&self, r: usize) -> String {
        format!("r{:03}", r + 1)
    }

    /// 5-digit occupation code; the requirement level cycles over 1-4.
    pub fn occupation_code(&self, o: usize) -> String {
        format!("{:03}0{}", o + 1, (o % 4) + 1)
    }

    pub fn occupation_key(&self, o: usize) -> String {
        format!("{:03}-{}", o + 1, (o % 4) + 1)
    }
}

/// Ground truth stored next to the generated tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub alpha_true: f64,
    pub rho: f64,
    pub delta: f64,
    pub seed: u64,
    pub config: SynthConfig,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub cells: Vec<MarketCell>,
    pub spells: Vec<WorkerSpell>,
    pub truth: TruthRecord,
}

// RNG stream kinds; each (kind, index) pair is an independent substream.
const STREAM_NATIONAL: u64 = 1;
const STREAM_YEAR: u64 = 2;
const STREAM_MARKET: u64 = 3;

fn stream_rng(seed: u64, kind: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 40) | index);
    rng
}

struct MarketDraws {
    cells: Vec<MarketCell>,
    spells: Vec<WorkerSpell>,
}

/// Generates the synthetic economy. Deterministic given the seed; market
/// blocks run in parallel on disjoint RNG streams and merge in market
/// order.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let o_count = config.n_occupations;
    let r_count = config.n_regions;
    let t_count = config.n_years;

    // National occupation-by-year shocks: demand (eta) and supply (kappa).
    let mut eta = vec![vec![0.0; t_count]; o_count];
    let mut kappa = vec![vec![0.0; t_count]; o_count];
    for o in 0..o_count {
        let mut rng = stream_rng(config.seed, STREAM_NATIONAL, o as u64);
        for t in 0..t_count {
            let e: f64 = StandardNormal.sample(&mut rng);
            let k: f64 = StandardNormal.sample(&mut rng);
            eta[o][t] = config.sd_national_demand * e;
            kappa[o][t] = config.sd_national_supply * k;
        }
    }
    // Year effects on wages.
    let year_effect: Vec<f64> = {
        let mut rng = stream_rng(config.seed, STREAM_YEAR, 0);
        (0..t_count)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                config.sd_year * e
            })
            .collect()
    };

    let markets: Vec<(usize, usize)> =
        (0..o_count).flat_map(|o| (0..r_count).map(move |r| (o, r))).collect();

    let blocks: Vec<MarketDraws> = par::map_indexed(&markets, |idx, &(o, r)| {
        generate_market(config, idx, o, r, &eta[o], &kappa[o], &year_effect)
    });

    let mut cells = Vec::with_capacity(markets.len() * t_count);
    let mut spells = Vec::with_capacity(markets.len() * t_count * config.workers_per_market);
    for mut b in blocks {
        cells.append(&mut b.cells);
        spells.append(&mut b.spells);
    }
    Ok(SynthOutput {
        cells,
        spells,
        truth: TruthRecord {
            alpha_true: config.alpha_true,
            rho: config.rho,
            delta: config.delta,
            seed: config.seed,
            config: config.clone(),
        },
    })
}

fn generate_market(
    config: &SynthConfig,
    market_index: usize,
    o: usize,
    r: usize,
    eta: &[f64],
    kappa: &[f64],
    year_effect: &[f64],
) -> MarketDraws {
    let mut rng = stream_rng(config.seed, STREAM_MARKET, market_index as u64);
    let t_count = config.n_years;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    // market-level intercepts
    let theta_intercept = config.theta_base.ln() + config.sd_market_theta * normal(&mut rng);
    let size_intercept = config.mean_seekers.ln() + config.sd_market_size * normal(&mut rng);
    let market_wage_fe = 0.05 * normal(&mut rng);

    // per-year market draws
    let mut ln_theta = vec![0.0; t_count]; // realized, from rounded counts
    let mut eps_market = vec![0.0; t_count];
    let mut cells = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let nu = config.sd_local_demand * normal(&mut rng);
        let xi = config.sd_local_supply * normal(&mut rng);
        let eps = config.sd_market_wage * normal(&mut rng);
        eps_market[t] = eps;

        let ln_u = size_intercept + kappa[t] + xi;
        let ln_theta_latent =
            theta_intercept + config.trend * t as f64 + eta[t] + nu - config.rho * eps - kappa[t]
                - xi;
        // V = theta x U rounded; tightness recomputed from rounded counts.
        let u = 5.0 + ln_u.exp().round();
        let theta_latent = ln_theta_latent.exp();
        let v = (theta_latent * u).round();
        let (theta, flag) = if v > 0.0 {
            (Some(v / u), CellFlag::Ok)
        } else {
            (None, CellFlag::NoVacancies)
        };
        ln_theta[t] = match theta {
            Some(th) => th.ln(),
            None => ln_theta_latent,
        };
        cells.push(MarketCell {
            occupation: config.occupation_key(o),
            region: config.district(r),
            year: config.first_year + t as i32,
            v_registered: v,
            v_total: v,
            u,
            theta,
            theta_flow: None,
            flag,
        });
    }

    // firms
    let n_firms = (config.workers_per_market / 10).max(2);
    let firm_fe: Vec<f64> = (0..n_firms).map(|_| config.sd_firm * normal(&mut rng)).collect();
    let firm_industry: Vec<u8> = (0..n_firms).map(|_| rng.gen_range(1..=9u8)).collect();

    // workers
    let district = config.district(r);
    let occupation_code = config.occupation_code(o);
    let east = r >= config.n_regions / 2;
    let mut spells = Vec::with_capacity(config.workers_per_market * t_count);
    for k in 0..config.workers_per_market {
        let worker_fe = config.sd_worker * normal(&mut rng);
        let base_age = rng.gen_range(22..50u8);
        let education = match rng.gen_range(0..3u8) {
            0 => Education::Low,
            1 => Education::Medium,
            _ => Education::High,
        };
        let gender = if rng.gen_bool(0.5) { Gender::Female } else { Gender::Male };
        let nationality =
            if rng.gen_bool(0.12) { Nationality::Foreign } else { Nationality::Native };
        let mut firm = k % n_firms;
        for t in 0..t_count {
            let moved = t > 0 && rng.gen_bool(config.move_prob);
            if moved {
                let next = rng.gen_range(0..n_firms - 1);
                firm = if next >= firm { next + 1 } else { next };
            }
            let hire = t == 0 || moved;
            let noise = config.sd_individual * normal(&mut rng);
            let log_wage = config.base_wage.ln()
                + config.alpha_true * ln_theta[t]
                + if hire { config.hire_effect } else { 0.0 }
                + worker_fe
                + year_effect[t]
                + market_wage_fe
                + firm_fe[firm]
                + config.delta * eta[t]
                + eps_market[t]
                + noise;
            spells.push(WorkerSpell {
                worker_id: format!("w{market_index}_{k}"),
                year: config.first_year + t as i32,
                firm_id: format!("f{market_index}_{firm}"),
                occupation: occupation_code.clone(),
                district: district.clone(),
                wage_nominal: log_wage.exp(),
                censored: false,
                age: (base_age as usize + t).min(100) as u8,
                education,
                gender,
                nationality,
                east,
                industry: firm_industry[firm],
                weight: 1.0,
                wage_real: None,
                hire: Some(hire),
            });
        }
    }
    MarketDraws { cells, spells }
}
