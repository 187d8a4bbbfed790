//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tightlab::analysis::{self, PartialOutSpec};
use tightlab::data::{
    self, load_tables, read_cells, write_cells, write_spells, RequirementGroup, TablePaths,
};
use tightlab::estimator::{self, EstimationResult, RegressionSpec};
use tightlab::imputation::{impute_wages, ImputeConfig};
use tightlab::instruments::compute_instruments;
use tightlab::panel::{merge_estimation_panel, Panel};
use tightlab::synth;
use tightlab::tightness::{build_cells, flow_adjust, transition_weights};
use tightlab::zones::{delineate, FlowMatrix};
use tightlab::{Error, Result};

use crate::config::{parse_grid, FileConfig};
use crate::manifest::{manifest_path_for, ManifestBuilder};
use crate::Cli;

pub fn delineate_zones(
    _cli: &Cli,
    file_config: &FileConfig,
    flows_path: &Path,
    adjacency_path: &Path,
    grid_flag: Option<&str>,
    out: &Path,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("delineate-zones");
    manifest.config(_cli.config.as_deref())?;
    manifest.input(flows_path)?.input(adjacency_path)?;

    let paths = TablePaths {
        flows: Some(flows_path.to_path_buf()),
        adjacency: Some(adjacency_path.to_path_buf()),
        ..Default::default()
    };
    // the loader validates counts; panel config is irrelevant to flows
    let (bundle, diag) = load_tables(&paths, &file_config.panel.to_panel_config()?)?;
    log_diagnostics(&diag);

    let grid_spec = grid_flag.unwrap_or(&file_config.zones.grid);
    let grid = parse_grid(grid_spec)?;
    let matrix = FlowMatrix::from_records(&bundle.flows, &bundle.adjacency)?;
    let partition = delineate(&matrix, &grid)?;

    let file = File::create(out)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "district,zone,threshold,q")?;
    for (i, label) in matrix.labels().iter().enumerate() {
        let zone = &matrix.labels()[partition.assignment[i]];
        writeln!(w, "{label},{zone},{},{}", partition.threshold, partition.q)?;
    }
    w.flush()?;

    manifest.output(out);
    manifest.finish(&manifest_path_for(out))?;
    log::info!(
        "{} districts -> {} zones at threshold {} (q = {:.4})",
        matrix.len(),
        partition.n_zones(),
        partition.threshold,
        partition.q
    );
    Ok(())
}

/// Reads a partition.csv into the district -> zone map.
fn read_zone_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let d_idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("district"))
        .ok_or_else(|| Error::validation("partition file needs a district column"))?;
    let z_idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("zone"))
        .ok_or_else(|| Error::validation("partition file needs a zone column"))?;
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        map.insert(record[d_idx].to_string(), record[z_idx].to_string());
    }
    Ok(map)
}

#[allow(clippy::too_many_arguments)]
pub fn build_tightness(
    cli: &Cli,
    file_config: &FileConfig,
    vacancies: &Path,
    seekers: &Path,
    shares: &Path,
    zones: Option<&Path>,
    spells: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("build-tightness");
    manifest.config(cli.config.as_deref())?;
    manifest.input(vacancies)?.input(seekers)?.input(shares)?;
    manifest.input_opt(zones)?.input_opt(spells)?;

    let panel_config = file_config.panel.to_panel_config()?;
    let paths = TablePaths {
        vacancies: Some(vacancies.to_path_buf()),
        seekers: Some(seekers.to_path_buf()),
        shares: Some(shares.to_path_buf()),
        spells: spells.map(|p| p.to_path_buf()),
        ..Default::default()
    };
    let (bundle, diag) = load_tables(&paths, &panel_config)?;
    log_diagnostics(&diag);

    let zone_map = zones.map(read_zone_map).transpose()?;
    let mut cells =
        build_cells(&bundle.vacancies, &bundle.seekers, &bundle.shares, zone_map.as_ref(), &panel_config)?;

    let want_flow = file_config.tightness.flow_adjust || spells.is_some();
    if want_flow {
        if bundle.spells.is_empty() {
            return Err(Error::validation(
                "flow adjustment needs --spells for the transition weights",
            ));
        }
        let weights = transition_weights(&bundle.spells, &panel_config)?;
        flow_adjust(&mut cells, &weights)?;
    }
    let instruments = compute_instruments(&cells);
    write_cells(out, &cells, Some(&instruments))?;

    manifest.output(out);
    manifest.finish(&manifest_path_for(out))?;
    log::info!("{} cells written", cells.len());
    Ok(())
}

pub fn impute(
    cli: &Cli,
    file_config: &FileConfig,
    spells_path: &Path,
    limits_path: &Path,
    out: &Path,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("impute");
    manifest.config(cli.config.as_deref())?;
    manifest.input(spells_path)?.input(limits_path)?;

    let panel_config = file_config.panel.to_panel_config()?;
    let paths = TablePaths { spells: Some(spells_path.to_path_buf()), ..Default::default() };
    let (mut bundle, diag) = load_tables(&paths, &panel_config)?;
    log_diagnostics(&diag);

    let limits = read_limits(limits_path)?;
    let report = impute_wages(&mut bundle.spells, &limits, &ImputeConfig::default())?;
    write_spells(out, &bundle.spells)?;

    manifest.output(out);
    manifest.finish(&manifest_path_for(out))?;
    log::info!(
        "{} wages imputed over {} cells; {} rows skipped",
        report.n_imputed,
        report.cells,
        report.skipped_rows.len()
    );
    Ok(())
}

fn read_limits(path: &Path) -> Result<BTreeMap<i32, f64>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let y_idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("year"))
        .ok_or_else(|| Error::validation("limits file needs a year column"))?;
    let l_idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("limit"))
        .ok_or_else(|| Error::validation("limits file needs a limit column"))?;
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let year: i32 = record[y_idx]
            .parse()
            .map_err(|_| Error::validation(format!("limits year {:?}", &record[y_idx])))?;
        let limit: f64 = record[l_idx]
            .parse()
            .map_err(|_| Error::validation(format!("limits value {:?}", &record[l_idx])))?;
        map.insert(year, limit);
    }
    Ok(map)
}

pub fn simulate(cli: &Cli, file_config: &FileConfig, out_dir: &Path) -> Result<()> {
    let mut manifest = ManifestBuilder::new("simulate");
    manifest.config(cli.config.as_deref())?;

    let config = file_config.synth.to_synth_config(cli.seed);
    manifest.seed(config.seed);
    std::fs::create_dir_all(out_dir)?;

    let output = synth::generate(&config)?;

    let spells_path = out_dir.join("spells.csv");
    write_spells(&spells_path, &output.spells)?;

    let vacancies_path = out_dir.join("vacancies.csv");
    {
        let mut w = BufWriter::new(File::create(&vacancies_path)?);
        writeln!(w, "occupation,district,year,v_registered")?;
        for (cell, o) in output.cells.iter().zip(cell_occupation_codes(&config, &output.cells)) {
            writeln!(w, "{o},{},{},{}", cell.region, cell.year, cell.v_registered)?;
        }
        w.flush()?;
    }
    let seekers_path = out_dir.join("seekers.csv");
    {
        let mut w = BufWriter::new(File::create(&seekers_path)?);
        writeln!(w, "occupation,district,year,u")?;
        for (cell, o) in output.cells.iter().zip(cell_occupation_codes(&config, &output.cells)) {
            writeln!(w, "{o},{},{},{}", cell.region, cell.year, cell.u)?;
        }
        w.flush()?;
    }
    // synthetic vacancies are fully registered: all shares are 1
    let shares_path = out_dir.join("shares.csv");
    {
        let mut w = BufWriter::new(File::create(&shares_path)?);
        writeln!(w, "year,requirement_group,share")?;
        for group in
            [RequirementGroup::Helpers, RequirementGroup::Professionals, RequirementGroup::SpecialistsExperts]
        {
            writeln!(w, "pooled,{},1.0", group.as_str())?;
        }
        w.flush()?;
    }
    // flat CPI: nominal wages are already real
    let cpi_path = out_dir.join("cpi.csv");
    {
        let mut w = BufWriter::new(File::create(&cpi_path)?);
        writeln!(w, "year,index")?;
        for t in 0..config.n_years {
            writeln!(w, "{},100.0", config.first_year + t as i32)?;
        }
        w.flush()?;
    }
    let truth_path = out_dir.join("truth.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&truth_path)?), &output.truth)?;

    for p in [&spells_path, &vacancies_path, &seekers_path, &shares_path, &cpi_path, &truth_path] {
        manifest.output(p);
    }
    manifest.finish(&manifest_path_for(out_dir))?;
    log::info!("{} spells, {} cells", output.spells.len(), output.cells.len());
    Ok(())
}

/// Recovers the 5-digit occupation code behind each cell's occupation key.
fn cell_occupation_codes(
    config: &synth::SynthConfig,
    cells: &[tightlab::tightness::MarketCell],
) -> Vec<String> {
    cells
        .iter()
        .map(|c| {
            let o: usize = c.occupation[..3].parse::<usize>().expect("synth key") - 1;
            config.occupation_code(o)
        })
        .collect()
}

/// Factor columns of the merged panel layout.
const PANEL_FACTORS: &[&str] = &[
    "worker",
    "firm",
    "year",
    "market",
    "occupation",
    "region",
    "occ_year",
    "industry_year",
    "firm_year",
    "wage_decile",
];

#[allow(clippy::too_many_arguments)]
pub fn estimate(
    cli: &Cli,
    file_config: &FileConfig,
    panel_path: Option<&Path>,
    spells: Option<&Path>,
    cells: Option<&Path>,
    zones: Option<&Path>,
    cpi: Option<&Path>,
    spec_path: &Path,
    emit_panel: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("estimate");
    manifest.config(cli.config.as_deref())?;
    manifest.input(spec_path)?;
    manifest.input_opt(panel_path)?.input_opt(spells)?.input_opt(cells)?;
    manifest.input_opt(zones)?.input_opt(cpi)?;

    let spec_text = std::fs::read_to_string(spec_path)?;
    let spec: RegressionSpec = toml::from_str(&spec_text)
        .map_err(|e| Error::validation(format!("spec {}: {e}", spec_path.display())))?;

    let panel = match (panel_path, spells, cells) {
        (Some(p), None, None) => Panel::read_csv(p, PANEL_FACTORS)?,
        (None, Some(spells_path), Some(cells_path)) => {
            let panel_config = file_config.panel.to_panel_config()?;
            let paths = TablePaths {
                spells: Some(spells_path.to_path_buf()),
                cpi: cpi.map(|p| p.to_path_buf()),
                ..Default::default()
            };
            let (mut bundle, diag) = load_tables(&paths, &panel_config)?;
            log_diagnostics(&diag);
            data::derive_hires(&mut bundle.spells);
            if let Some(series) = &bundle.cpi {
                data::deflate(&mut bundle.spells, series)?;
            }
            let (cell_rows, instruments) = read_cells(cells_path)?;
            let zone_map = zones.map(read_zone_map).transpose()?;
            merge_estimation_panel(
                &bundle.spells,
                &cell_rows,
                Some(&instruments),
                zone_map.as_ref(),
                &panel_config,
            )?
        }
        _ => {
            return Err(Error::validation(
                "estimate needs either --panel or both --spells and --cells",
            ))
        }
    };
    if let Some(p) = emit_panel {
        panel.write_csv(p)?;
        manifest.output(p);
    }

    let result = estimator::estimate(&spec, &panel)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out)?), &result)?;

    manifest.output(out);
    manifest.finish(&manifest_path_for(out))?;
    for t in &result.terms {
        log::info!(
            "{}: {:.6} (se {:.6}){}",
            t.name,
            t.coefficient,
            t.se,
            t.stars
        );
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpretFile {
    contribution: Option<ContributionSection>,
    wage_setting: Option<WageSettingSection>,
    deciles: Option<DecileSection>,
    binscatter: Option<BinscatterSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContributionSection {
    /// Defaults to the first explanatory coefficient of --result.
    elasticity: Option<f64>,
    tightness_growth_pct: f64,
    wage_growth_pct: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WageSettingSection {
    elasticity: Option<f64>,
    base_wage: f64,
    base_tightness: f64,
    gross_value_added: f64,
    workforce: f64,
    days_per_year: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecileSection {
    observed_growth_pct: Vec<f64>,
    elasticity: Vec<f64>,
    tightness_growth_pct: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BinscatterSection {
    x: String,
    y: String,
    bins: usize,
    #[serde(default)]
    fe: Vec<String>,
    #[serde(default)]
    controls: Vec<String>,
    #[serde(default)]
    project_on: Option<String>,
    out: String,
}

#[derive(Debug, Serialize)]
struct ReportOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    contribution: Option<ContributionOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wage_setting_coefficient: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deciles: Option<analysis::DecileCounterfactual>,
    #[serde(skip_serializing_if = "Option::is_none")]
    binscatter_file: Option<String>,
}

#[derive(Debug, Serialize)]
struct ContributionOutput {
    elasticity: f64,
    wage_effect_pct: f64,
    share_of_wage_growth_pct: f64,
}

pub fn report(
    cli: &Cli,
    result_path: Option<&Path>,
    interpret_path: &Path,
    panel_path: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("report");
    manifest.config(cli.config.as_deref())?;
    manifest.input(interpret_path)?;
    manifest.input_opt(result_path)?.input_opt(panel_path)?;

    let text = std::fs::read_to_string(interpret_path)?;
    let interpret: InterpretFile = toml::from_str(&text)
        .map_err(|e| Error::validation(format!("interpret {}: {e}", interpret_path.display())))?;

    let fitted_elasticity: Option<f64> = match result_path {
        Some(p) => {
            let result: EstimationResult = serde_json::from_reader(File::open(p)?)?;
            result.terms.first().map(|t| t.coefficient)
        }
        None => None,
    };
    let pick = |explicit: Option<f64>| -> Result<f64> {
        explicit.or(fitted_elasticity).ok_or_else(|| {
            Error::validation("no elasticity given and no --result to take one from")
        })
    };

    let mut output = ReportOutput {
        contribution: None,
        wage_setting_coefficient: None,
        deciles: None,
        binscatter_file: None,
    };
    if let Some(c) = &interpret.contribution {
        let elasticity = pick(c.elasticity)?;
        let (wage_effect_pct, share_pct) =
            analysis::contribution_share(elasticity, c.tightness_growth_pct, c.wage_growth_pct)?;
        output.contribution = Some(ContributionOutput {
            elasticity,
            wage_effect_pct,
            share_of_wage_growth_pct: share_pct,
        });
    }
    if let Some(wsec) = &interpret.wage_setting {
        let elasticity = pick(wsec.elasticity)?;
        output.wage_setting_coefficient = Some(analysis::wage_setting_level(
            elasticity,
            wsec.base_wage,
            wsec.base_tightness,
            wsec.gross_value_added,
            wsec.workforce,
            wsec.days_per_year,
        )?);
    }
    if let Some(d) = &interpret.deciles {
        output.deciles = Some(analysis::decile_counterfactual(
            &d.observed_growth_pct,
            &d.elasticity,
            &d.tightness_growth_pct,
        )?);
    }
    if let Some(b) = &interpret.binscatter {
        let panel_path = panel_path.ok_or_else(|| {
            Error::validation("binscatter section needs --panel with the merged data")
        })?;
        let panel = Panel::read_csv(panel_path, PANEL_FACTORS)?;
        let partial = if b.fe.is_empty() && b.controls.is_empty() && b.project_on.is_none() {
            None
        } else {
            Some(PartialOutSpec {
                fe: b.fe.clone(),
                controls: b.controls.clone(),
                project_on: b.project_on.clone(),
            })
        };
        let points = analysis::binscatter(&panel, &b.x, &b.y, b.bins, partial.as_ref())?;
        let bins_path = Path::new(&b.out);
        let mut w = BufWriter::new(File::create(bins_path)?);
        writeln!(w, "bin,x_mean,y_mean,count")?;
        for p in &points {
            writeln!(w, "{},{},{},{}", p.bin, p.x_mean, p.y_mean, p.count)?;
        }
        w.flush()?;
        manifest.output(bins_path);
        output.binscatter_file = Some(b.out.clone());
    }

    serde_json::to_writer_pretty(BufWriter::new(File::create(out)?), &output)?;
    manifest.output(out);
    manifest.finish(&manifest_path_for(out))?;
    Ok(())
}

fn log_diagnostics(diag: &data::LoadDiagnostics) {
    for (table, (read, kept)) in &diag.row_counts {
        log::info!("{table}: {kept} of {read} rows kept");
    }
    for (table, line, reason) in &diag.rejects {
        log::warn!("{table} line {line}: {reason}");
    }
}
