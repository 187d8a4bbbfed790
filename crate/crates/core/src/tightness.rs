//! Market-cell construction: vacancy extrapolation, tightness, and the
//! flow-adjusted variant built from occupation-to-occupation transitions.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{
    occupation_key, requirement_level, JobSeekerRecord, NotificationShares, PanelConfig,
    RequirementGroup, VacancyRecord, WorkerSpell,
};
use crate::error::{Error, Result};

/// Why a cell carries no tightness value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFlag {
    Ok,
    /// No job seekers: theta undefined.
    NoSeekers,
    /// No vacancies: theta undefined.
    NoVacancies,
    /// Transition weights for this occupation fell back to the identity.
    WeightFallback,
}

impl CellFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            CellFlag::Ok => "ok",
            CellFlag::NoSeekers => "no_seekers",
            CellFlag::NoVacancies => "no_vacancies",
            CellFlag::WeightFallback => "weight_fallback",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(CellFlag::Ok),
            "no_seekers" => Some(CellFlag::NoSeekers),
            "no_vacancies" => Some(CellFlag::NoVacancies),
            "weight_fallback" => Some(CellFlag::WeightFallback),
            _ => None,
        }
    }
}

/// One (occupation key, region, year) labor-market cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketCell {
    pub occupation: String,
    pub region: String,
    pub year: i32,
    pub v_registered: f64,
    /// Registered count divided by the notification share.
    pub v_total: f64,
    pub u: f64,
    /// v_total / u, when both are positive.
    pub theta: Option<f64>,
    pub theta_flow: Option<f64>,
    pub flag: CellFlag,
}

/// Extrapolates registered vacancies to total vacancies for one record.
///
/// The requirement digit picks the share group: 1 = helpers,
/// 2 = professionals, 3 and 4 = specialists and experts.
pub fn extrapolate_vacancies(
    v_registered: f64,
    shares: &NotificationShares,
    requirement_digit: u8,
    year: i32,
) -> Result<f64> {
    let group = RequirementGroup::from_level(requirement_digit).ok_or_else(|| {
        Error::validation(format!("requirement digit {requirement_digit} outside 1-4"))
    })?;
    let share = shares.lookup(year, group)?;
    Ok(v_registered / share)
}

/// Builds the (occupation key, region, year) cell table.
///
/// Counts are extrapolated at the 5-digit level, then summed to the
/// configured occupation key and region. Cells with zero seekers or zero
/// total vacancies are kept but flagged, with theta undefined.
pub fn build_cells(
    vacancies: &[VacancyRecord],
    seekers: &[JobSeekerRecord],
    shares: &NotificationShares,
    zone_of: Option<&BTreeMap<String, String>>,
    config: &PanelConfig,
) -> Result<Vec<MarketCell>> {
    config.validate()?;
    type Key = (String, String, i32);
    // (v_registered, v_total, u) per aggregated key
    let mut agg: BTreeMap<Key, (f64, f64, f64)> = BTreeMap::new();

    for v in vacancies {
        let level = requirement_level(&v.occupation).ok_or_else(|| {
            Error::validation(format!("occupation {} has no valid requirement digit", v.occupation))
        })?;
        let key = occupation_key(&v.occupation, config.occupation_digits)?;
        let region = config.region_of(&v.district, zone_of)?;
        let v_total = extrapolate_vacancies(v.v_registered, shares, level, v.year)?;
        let entry = agg.entry((key, region, v.year)).or_insert((0.0, 0.0, 0.0));
        entry.0 += v.v_registered;
        entry.1 += v_total;
    }
    for s in seekers {
        let key = occupation_key(&s.occupation, config.occupation_digits)?;
        let region = config.region_of(&s.district, zone_of)?;
        let entry = agg.entry((key, region, s.year)).or_insert((0.0, 0.0, 0.0));
        entry.2 += s.u;
    }

    let cells = agg
        .into_iter()
        .map(|((occupation, region, year), (v_registered, v_total, u))| {
            let (theta, flag) = if u <= 0.0 {
                (None, CellFlag::NoSeekers)
            } else if v_total <= 0.0 {
                (None, CellFlag::NoVacancies)
            } else {
                (Some(v_total / u), CellFlag::Ok)
            };
            MarketCell {
                occupation,
                region,
                year,
                v_registered,
                v_total,
                u,
                theta,
                theta_flow: None,
                flag,
            }
        })
        .collect();
    Ok(cells)
}

/// Occupation-to-occupation weights from observed worker transitions:
/// w(o,h) = [P(h|o) / P(o|o)] x [L_o / L_h], with w(o,o) = 1.
#[derive(Debug, Clone, Default)]
pub struct FlowWeights {
    /// Dense weight lookup; absent pairs have weight zero.
    pub weights: BTreeMap<(String, String), f64>,
    /// Spell count per occupation key, pooled over all years.
    pub employment: BTreeMap<String, f64>,
    /// Occupations with P(o|o) = 0 whose row fell back to the identity.
    pub fallback: BTreeSet<String>,
}

impl FlowWeights {
    pub fn weight(&self, from: &str, to: &str) -> f64 {
        if from == to {
            return 1.0;
        }
        if self.fallback.contains(from) {
            return 0.0;
        }
        self.weights.get(&(from.to_string(), to.to_string())).copied().unwrap_or(0.0)
    }

    /// Identity weights: every occupation keeps only itself.
    pub fn identity() -> Self {
        FlowWeights::default()
    }
}

/// Estimates transition weights from consecutive-year spell pairs, pooled
/// over regions and years. Occupations are collapsed to the configured key
/// before counting.
pub fn transition_weights(spells: &[WorkerSpell], config: &PanelConfig) -> Result<FlowWeights> {
    config.validate()?;
    // (worker, year) -> occupation key
    let mut occ_of: HashMap<(&str, i32), String> = HashMap::with_capacity(spells.len());
    let mut employment: BTreeMap<String, f64> = BTreeMap::new();
    for s in spells {
        let key = occupation_key(&s.occupation, config.occupation_digits)?;
        *employment.entry(key.clone()).or_default() += 1.0;
        occ_of.insert((s.worker_id.as_str(), s.year), key);
    }

    // transitions(o, h) and the number of observed o -> anything pairs
    let mut transitions: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut origins: BTreeMap<String, f64> = BTreeMap::new();
    for s in spells {
        if let Some(next) = occ_of.get(&(s.worker_id.as_str(), s.year + 1)) {
            let from = occ_of[&(s.worker_id.as_str(), s.year)].clone();
            *origins.entry(from.clone()).or_default() += 1.0;
            *transitions.entry((from, next.clone())).or_default() += 1.0;
        }
    }

    let mut weights = BTreeMap::new();
    let mut fallback = BTreeSet::new();
    for (occ, &n_origin) in &origins {
        let stay = transitions.get(&(occ.clone(), occ.clone())).copied().unwrap_or(0.0);
        if stay <= 0.0 {
            fallback.insert(occ.clone());
            continue;
        }
        let p_stay = stay / n_origin;
        let l_o = employment[occ];
        for ((from, to), &count) in transitions.range((occ.clone(), String::new())..) {
            if from != occ {
                break;
            }
            let p_move = count / n_origin;
            let l_h = employment[to];
            let w = (p_move / p_stay) * (l_o / l_h);
            weights.insert((from.clone(), to.clone()), w);
        }
    }
    // Occupations never observed as origins (only last-year spells) also
    // fall back to the identity row.
    for occ in employment.keys() {
        if !origins.contains_key(occ) {
            fallback.insert(occ.clone());
        }
    }
    Ok(FlowWeights { weights, employment, fallback })
}

/// Fills `theta_flow` on every cell: within each (region, year), the
/// weighted sums V~(o) = sum_h w(o,h) V(h) and U~(o) = sum_h w(o,h) U(h),
/// with theta_flow = V~/U~ where U~ > 0.
pub fn flow_adjust(cells: &mut [MarketCell], weights: &FlowWeights) -> Result<()> {
    // region-year -> list of cell indices
    let mut groups: BTreeMap<(String, i32), Vec<usize>> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        groups.entry((c.region.clone(), c.year)).or_default().push(i);
    }

    for indices in groups.values() {
        for &i in indices {
            let occ = cells[i].occupation.clone();
            let mut v_adj = 0.0;
            let mut u_adj = 0.0;
            for &j in indices {
                let w = weights.weight(&occ, &cells[j].occupation);
                v_adj += w * cells[j].v_total;
                u_adj += w * cells[j].u;
            }
            cells[i].theta_flow = if u_adj > 0.0 && v_adj > 0.0 { Some(v_adj / u_adj) } else { None };
            if weights.fallback.contains(&occ) && cells[i].flag == CellFlag::Ok {
                cells[i].flag = CellFlag::WeightFallback;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RegionScheme;

    fn shares_with(year: i32, entries: &[(RequirementGroup, f64)]) -> NotificationShares {
        let mut s = NotificationShares::default();
        for &(g, v) in entries {
            s.insert_year(year, g, v).unwrap();
        }
        s
    }

    #[test]
    fn extrapolation_divides_by_share() {
        let s = shares_with(2013, &[(RequirementGroup::Helpers, 0.5)]);
        assert_eq!(extrapolate_vacancies(50.0, &s, 1, 2013).unwrap(), 100.0);
    }

    #[test]
    fn helpers_2012_share_matches_survey_table() {
        // 2012 helpers notification share is 36.0 percent.
        let s = shares_with(2012, &[(RequirementGroup::Helpers, 0.360)]);
        let v = extrapolate_vacancies(36.0, &s, 1, 2012).unwrap();
        assert!((v - 100.0).abs() < 1e-12);
    }

    #[test]
    fn share_of_one_is_identity() {
        let s = shares_with(2013, &[(RequirementGroup::SpecialistsExperts, 1.0)]);
        assert_eq!(extrapolate_vacancies(7.0, &s, 4, 2013).unwrap(), 7.0);
    }

    #[test]
    fn missing_share_is_hard_error_without_pooled_fallback() {
        let s = shares_with(2013, &[(RequirementGroup::Helpers, 0.5)]);
        assert!(extrapolate_vacancies(5.0, &s, 2, 2013).is_err());
        let mut s = s;
        s.insert_pooled(RequirementGroup::Professionals, 0.445).unwrap();
        assert!((extrapolate_vacancies(5.0, &s, 2, 2013).unwrap() - 5.0 / 0.445).abs() < 1e-12);
    }

    fn districts_config() -> PanelConfig {
        PanelConfig { region_scheme: RegionScheme::Districts, ..Default::default() }
    }

    #[test]
    fn single_cell_theta_matches_aggregate_ratios() {
        // Aggregate theta was 0.56 in 2022 and 0.24 in 2012.
        let shares = shares_with(2022, &[(RequirementGroup::Helpers, 1.0)]);
        let vacancies =
            vec![VacancyRecord { occupation: "12341".into(), district: "d1".into(), year: 2022, v_registered: 56.0 }];
        let seekers =
            vec![JobSeekerRecord { occupation: "12341".into(), district: "d1".into(), year: 2022, u: 100.0 }];
        let cells = build_cells(&vacancies, &seekers, &shares, None, &districts_config()).unwrap();
        assert_eq!(cells.len(), 1);
        assert!((cells[0].theta.unwrap() - 0.56).abs() < 1e-12);

        let shares = shares_with(2012, &[(RequirementGroup::Helpers, 1.0)]);
        let vacancies =
            vec![VacancyRecord { occupation: "12341".into(), district: "d1".into(), year: 2012, v_registered: 24.0 }];
        let seekers =
            vec![JobSeekerRecord { occupation: "12341".into(), district: "d1".into(), year: 2012, u: 100.0 }];
        let cells = build_cells(&vacancies, &seekers, &shares, None, &districts_config()).unwrap();
        assert!((cells[0].theta.unwrap() - 0.24).abs() < 1e-12);

        // 0.24 -> 0.56 is 133.3 percent growth
        let growth = (0.56_f64 / 0.24 - 1.0) * 100.0;
        assert!((growth - 133.3).abs() < 0.05, "growth = {growth}");
    }

    #[test]
    fn cells_with_zero_counts_are_flagged_not_dropped() {
        let shares = shares_with(2013, &[(RequirementGroup::Helpers, 1.0)]);
        let vacancies =
            vec![VacancyRecord { occupation: "12341".into(), district: "d1".into(), year: 2013, v_registered: 3.0 }];
        let seekers =
            vec![JobSeekerRecord { occupation: "99991".into(), district: "d1".into(), year: 2013, u: 10.0 }];
        let cells = build_cells(&vacancies, &seekers, &shares, None, &districts_config()).unwrap();
        assert_eq!(cells.len(), 2);
        let no_seekers = cells.iter().find(|c| c.occupation == "123-1").unwrap();
        assert_eq!(no_seekers.flag, CellFlag::NoSeekers);
        assert!(no_seekers.theta.is_none());
        let no_vac = cells.iter().find(|c| c.occupation == "999-1").unwrap();
        assert_eq!(no_vac.flag, CellFlag::NoVacancies);
        assert!(no_vac.theta.is_none());
    }

    #[test]
    fn aggregation_collapses_to_occupation_key_level() {
        // Two 5-digit codes sharing the same leading 3 digits and level.
        let shares = shares_with(2013, &[(RequirementGroup::Professionals, 0.5)]);
        let vacancies = vec![
            VacancyRecord { occupation: "26312".into(), district: "d1".into(), year: 2013, v_registered: 4.0 },
            VacancyRecord { occupation: "26322".into(), district: "d1".into(), year: 2013, v_registered: 6.0 },
        ];
        let seekers = vec![
            JobSeekerRecord { occupation: "26312".into(), district: "d1".into(), year: 2013, u: 10.0 },
            JobSeekerRecord { occupation: "26322".into(), district: "d1".into(), year: 2013, u: 30.0 },
        ];
        let cells = build_cells(&vacancies, &seekers, &shares, None, &districts_config()).unwrap();
        assert_eq!(cells.len(), 1);
        let c = &cells[0];
        assert_eq!(c.occupation, "263-2");
        assert_eq!(c.v_registered, 10.0);
        assert_eq!(c.v_total, 20.0);
        assert_eq!(c.u, 40.0);
        assert!((c.theta.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_zone_mapping_is_hard_error() {
        let shares = shares_with(2013, &[(RequirementGroup::Helpers, 1.0)]);
        let vacancies =
            vec![VacancyRecord { occupation: "12341".into(), district: "d9".into(), year: 2013, v_registered: 3.0 }];
        let cfg = PanelConfig { region_scheme: RegionScheme::Zones, ..Default::default() };
        let zones: BTreeMap<String, String> = BTreeMap::new();
        assert!(build_cells(&vacancies, &[], &shares, Some(&zones), &cfg).is_err());
    }

    fn spell(worker: &str, year: i32, occupation: &str) -> WorkerSpell {
        WorkerSpell {
            worker_id: worker.into(),
            year,
            firm_id: "f".into(),
            occupation: occupation.into(),
            district: "d1".into(),
            wage_nominal: 100.0,
            censored: false,
            age: 30,
            education: crate::data::Education::Medium,
            gender: crate::data::Gender::Female,
            nationality: crate::data::Nationality::Native,
            east: false,
            industry: 5,
            weight: 1.0,
            wage_real: None,
            hire: None,
        }
    }

    #[test]
    fn transition_weight_formula() {
        // Occupation A ("111-1"): 10 workers observed as origins, 5 stay,
        // 1 moves to B; employment pooled L_A = 20, L_B = 10 gives
        // w(A,B) = (0.1/0.5) x (20/10) = 0.4.
        let mut spells = Vec::new();
        for k in 0..10 {
            spells.push(spell(&format!("a{k}"), 2012, "11111"));
            let next = match k {
                0..=4 => "11111",        // stayers
                5 => "22221",            // mover to B
                _ => "33331",            // movers elsewhere
            };
            spells.push(spell(&format!("a{k}"), 2013, next));
        }
        // pad employment: L_A = 20 total spells in A, L_B = 10
        for k in 0..5 {
            spells.push(spell(&format!("pa{k}"), 2020, "11111"));
        }
        for k in 0..8 {
            spells.push(spell(&format!("pb{k}"), 2020, "22221"));
        }
        // A-spells so far: 10 (2012) + 5 (2013 stayers) + 5 pad = 20.
        // B-spells: 1 (2013) + 8 pad = 9; add one more.
        spells.push(spell("pb9", 2021, "22221"));

        let w = transition_weights(&spells, &districts_config()).unwrap();
        assert_eq!(w.employment["111-1"], 20.0);
        assert_eq!(w.employment["222-1"], 10.0);
        let wab = w.weight("111-1", "222-1");
        assert!((wab - 0.4).abs() < 1e-12, "w = {wab}");
        // own weight is 1 by construction
        assert_eq!(w.weight("111-1", "111-1"), 1.0);
        // zero observed flows mean zero weight
        assert_eq!(w.weight("222-1", "111-1"), 0.0);
    }

    #[test]
    fn no_stayers_falls_back_to_identity_row() {
        let spells = vec![
            spell("a", 2012, "11111"),
            spell("a", 2013, "22221"), // only ever moves
            spell("b", 2013, "22221"),
        ];
        let w = transition_weights(&spells, &districts_config()).unwrap();
        assert!(w.fallback.contains("111-1"));
        assert_eq!(w.weight("111-1", "222-1"), 0.0);
        assert_eq!(w.weight("111-1", "111-1"), 1.0);
    }

    fn cell(occ: &str, region: &str, v: f64, u: f64) -> MarketCell {
        MarketCell {
            occupation: occ.into(),
            region: region.into(),
            year: 2013,
            v_registered: v,
            v_total: v,
            u,
            theta: if v > 0.0 && u > 0.0 { Some(v / u) } else { None },
            theta_flow: None,
            flag: CellFlag::Ok,
        }
    }

    #[test]
    fn identity_weights_collapse_to_baseline() {
        let mut cells = vec![cell("111-1", "r1", 10.0, 20.0), cell("222-1", "r1", 4.0, 8.0)];
        flow_adjust(&mut cells, &FlowWeights::identity()).unwrap();
        for c in &cells {
            assert_eq!(c.theta_flow, c.theta);
        }
    }

    #[test]
    fn uniform_weights_collapse_to_regional_totals() {
        let mut cells = vec![cell("111-1", "r1", 10.0, 20.0), cell("222-1", "r1", 4.0, 8.0)];
        let mut w = FlowWeights::identity();
        w.weights.insert(("111-1".into(), "222-1".into()), 1.0);
        w.weights.insert(("222-1".into(), "111-1".into()), 1.0);
        flow_adjust(&mut cells, &w).unwrap();
        for c in &cells {
            assert!((c.theta_flow.unwrap() - 14.0 / 28.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_sum_is_direct() {
        // w(1,2) = 0.5, V = (10, 4) -> V~_1 = 10 + 0.5 x 4 = 12.
        let mut cells = vec![cell("111-1", "r1", 10.0, 20.0), cell("222-1", "r1", 4.0, 8.0)];
        let mut w = FlowWeights::identity();
        w.weights.insert(("111-1".into(), "222-1".into()), 0.5);
        flow_adjust(&mut cells, &w).unwrap();
        let c1 = &cells[0];
        // V~ = 12, U~ = 20 + 0.5 x 8 = 24
        assert!((c1.theta_flow.unwrap() - 12.0 / 24.0).abs() < 1e-12);
        // the other row is untouched by the one-directional weight
        assert_eq!(cells[1].theta_flow, cells[1].theta);
    }

    #[test]
    fn adjusted_counts_dominate_raw_counts() {
        let mut cells = vec![
            cell("111-1", "r1", 10.0, 20.0),
            cell("222-1", "r1", 4.0, 8.0),
            cell("333-1", "r1", 6.0, 2.0),
        ];
        let mut w = FlowWeights::identity();
        w.weights.insert(("111-1".into(), "222-1".into()), 0.3);
        w.weights.insert(("111-1".into(), "333-1".into()), 0.7);
        w.weights.insert(("222-1".into(), "111-1".into()), 0.1);
        flow_adjust(&mut cells, &w).unwrap();
        // V~ >= V and U~ >= U follow from w >= 0 and w(o,o) = 1; theta_flow
        // being defined everywhere here implies both sums stayed positive.
        for c in &cells {
            assert!(c.theta_flow.is_some());
        }
    }
}
