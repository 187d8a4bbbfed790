//! Declarative run configuration.
//!
//! One TOML file with a section per pipeline stage. Precedence: command-line
//! flags override file values, which override the built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tightlab::data::{PanelConfig, RegionScheme};
use tightlab::synth::SynthConfig;
use tightlab::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub panel: PanelSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub zones: ZonesSection,
    #[serde(default)]
    pub tightness: TightnessSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSection {
    pub occupation_digits: u8,
    pub region_scheme: String,
    pub base_year: i32,
    pub years: (i32, i32),
    #[serde(default)]
    pub trim: Option<(f64, f64)>,
    /// year -> censoring limit in EUR/day
    #[serde(default)]
    pub censor_limits: BTreeMap<String, f64>,
}

impl Default for PanelSection {
    fn default() -> Self {
        PanelSection {
            occupation_digits: 3,
            region_scheme: "districts".into(),
            base_year: 2015,
            years: (2012, 2022),
            trim: None,
            censor_limits: BTreeMap::new(),
        }
    }
}

impl PanelSection {
    pub fn to_panel_config(&self) -> Result<PanelConfig> {
        let region_scheme = RegionScheme::parse(&self.region_scheme).ok_or_else(|| {
            Error::validation(format!("unknown region_scheme {:?}", self.region_scheme))
        })?;
        let mut censor_limits = BTreeMap::new();
        for (year, limit) in &self.censor_limits {
            let y: i32 = year
                .parse()
                .map_err(|_| Error::validation(format!("censor_limits year {year:?}")))?;
            censor_limits.insert(y, *limit);
        }
        let cfg = PanelConfig {
            occupation_digits: self.occupation_digits,
            region_scheme,
            base_year: self.base_year,
            censor_limits,
            trim: self.trim,
            years: self.years,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Synth parameters; anything omitted falls back to the library defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub alpha_true: Option<f64>,
    pub rho: Option<f64>,
    pub delta: Option<f64>,
    pub occupations: Option<usize>,
    pub regions: Option<usize>,
    pub years: Option<usize>,
    pub workers_per_market: Option<usize>,
    pub seed: Option<u64>,
    pub theta_base: Option<f64>,
    pub trend: Option<f64>,
    pub mean_seekers: Option<f64>,
    pub sd_market_theta: Option<f64>,
    pub sd_market_size: Option<f64>,
    pub sd_national_demand: Option<f64>,
    pub sd_national_supply: Option<f64>,
    pub sd_local_demand: Option<f64>,
    pub sd_local_supply: Option<f64>,
    pub sd_market_wage: Option<f64>,
    pub sd_worker: Option<f64>,
    pub sd_firm: Option<f64>,
    pub sd_year: Option<f64>,
    pub sd_individual: Option<f64>,
    pub hire_effect: Option<f64>,
    pub move_prob: Option<f64>,
    pub first_year: Option<i32>,
    pub base_wage: Option<f64>,
}

impl SynthSection {
    pub fn to_synth_config(&self, seed_flag: Option<u64>) -> SynthConfig {
        let mut cfg = SynthConfig::default();
        macro_rules! fill {
            ($($field:ident <- $opt:ident),* $(,)?) => {
                $(if let Some(v) = self.$opt { cfg.$field = v; })*
            };
        }
        fill!(
            alpha_true <- alpha_true,
            rho <- rho,
            delta <- delta,
            n_occupations <- occupations,
            n_regions <- regions,
            n_years <- years,
            workers_per_market <- workers_per_market,
            seed <- seed,
            theta_base <- theta_base,
            trend <- trend,
            mean_seekers <- mean_seekers,
            sd_market_theta <- sd_market_theta,
            sd_market_size <- sd_market_size,
            sd_national_demand <- sd_national_demand,
            sd_national_supply <- sd_national_supply,
            sd_local_demand <- sd_local_demand,
            sd_local_supply <- sd_local_supply,
            sd_market_wage <- sd_market_wage,
            sd_worker <- sd_worker,
            sd_firm <- sd_firm,
            sd_year <- sd_year,
            sd_individual <- sd_individual,
            hire_effect <- hire_effect,
            move_prob <- move_prob,
            first_year <- first_year,
            base_wage <- base_wage,
        );
        // flags override file values override defaults
        if let Some(seed) = seed_flag {
            cfg.seed = seed;
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZonesSection {
    /// "start:stop:step" or explicit list.
    pub grid: String,
}

impl Default for ZonesSection {
    fn default() -> Self {
        ZonesSection { grid: "0.02:0.20:0.01".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightnessSection {
    /// Compute the flow-adjusted tightness column (needs spells for the
    /// transition weights).
    pub flow_adjust: bool,
}

impl Default for TightnessSection {
    fn default() -> Self {
        TightnessSection { flow_adjust: false }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text)
                    .map_err(|e| Error::validation(format!("config {}: {e}", p.display())))
            }
            None => Ok(FileConfig::default()),
        }
    }
}

/// Parses "start:stop:step" (inclusive stop within half a step) or a
/// comma-separated list of thresholds.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = if parts.len() == 3 {
        let start: f64 = parts[0].parse().map_err(|_| bad_grid(spec))?;
        let stop: f64 = parts[1].parse().map_err(|_| bad_grid(spec))?;
        let step: f64 = parts[2].parse().map_err(|_| bad_grid(spec))?;
        if step <= 0.0 || stop < start {
            return Err(bad_grid(spec));
        }
        let mut grid = Vec::new();
        let mut k = 0;
        loop {
            let v = start + step * k as f64;
            if v > stop + step / 2.0 {
                break;
            }
            grid.push(v);
            k += 1;
        }
        grid
    } else {
        spec.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad_grid(spec)))
            .collect::<Result<Vec<f64>>>()?
    };
    if grid.is_empty() {
        return Err(bad_grid(spec));
    }
    Ok(grid)
}

fn bad_grid(spec: &str) -> Error {
    Error::validation(format!("grid {spec:?} must be start:stop:step or a comma list"))
}
