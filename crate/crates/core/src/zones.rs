//! Commuting-zone delineation from district-level commuting flows.
//!
//! Districts are merged by iterated dominant-flow contraction at a grid of
//! thresholds; the partition with the highest modularity wins. Modularity is
//! the standard Newman quality on the symmetrized weighted graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{AdjacencyRecord, FlowRecord};
use crate::error::{Error, Result};
use crate::par;

/// Square matrix of directed commuter flows plus geographic adjacency.
/// `flow(i, i)` is within-district commuting and counts as internal weight.
#[derive(Debug, Clone)]
pub struct FlowMatrix {
    labels: Vec<String>,
    flows: Vec<f64>,
    adjacency: Vec<bool>,
}

impl FlowMatrix {
    pub fn new(labels: Vec<String>, flows: Vec<f64>, adjacency: Vec<bool>) -> Result<Self> {
        let n = labels.len();
        if flows.len() != n * n {
            return Err(Error::validation(format!(
                "flow matrix has {} entries, expected {}",
                flows.len(),
                n * n
            )));
        }
        if adjacency.len() != n * n {
            return Err(Error::validation(format!(
                "adjacency has {} entries, expected {}",
                adjacency.len(),
                n * n
            )));
        }
        if flows.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::validation("flows must be nonnegative"));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if adjacency[i * n + j] != adjacency[j * n + i] {
                    return Err(Error::validation(format!(
                        "adjacency not symmetric between {} and {}",
                        labels[i], labels[j]
                    )));
                }
            }
        }
        Ok(FlowMatrix { labels, flows, adjacency })
    }

    /// Builds the matrix from edge lists; districts appearing only in the
    /// adjacency table still get a node.
    pub fn from_records(flows: &[FlowRecord], adjacency: &[AdjacencyRecord]) -> Result<Self> {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for f in flows {
            let next = index.len();
            index.entry(f.origin.as_str()).or_insert(next);
            let next = index.len();
            index.entry(f.destination.as_str()).or_insert(next);
        }
        for a in adjacency {
            let next = index.len();
            index.entry(a.district_a.as_str()).or_insert(next);
            let next = index.len();
            index.entry(a.district_b.as_str()).or_insert(next);
        }
        // BTreeMap insertion order above is arrival order; re-index sorted
        // so the matrix layout is deterministic under any input order.
        let mut labels: Vec<String> = index.keys().map(|s| s.to_string()).collect();
        labels.sort();
        let lookup: BTreeMap<&str, usize> =
            labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let n = labels.len();
        let mut fm = vec![0.0; n * n];
        for f in flows {
            let i = lookup[f.origin.as_str()];
            let j = lookup[f.destination.as_str()];
            fm[i * n + j] += f.commuters;
        }
        let mut adj = vec![false; n * n];
        for a in adjacency {
            let i = lookup[a.district_a.as_str()];
            let j = lookup[a.district_b.as_str()];
            adj[i * n + j] = true;
            adj[j * n + i] = true;
        }
        FlowMatrix::new(labels, fm, adj)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn flow(&self, i: usize, j: usize) -> f64 {
        self.flows[i * self.len() + j]
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.len() + j]
    }

    fn has_adjacency(&self) -> bool {
        self.adjacency.iter().any(|&a| a)
    }

    /// Symmetrized tie weight between two distinct nodes.
    fn tie(&self, i: usize, j: usize) -> f64 {
        self.flow(i, j) + self.flow(j, i)
    }
}

/// District-to-zone assignment with its modularity score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZonePartition {
    /// Zone id per district, indexed like the flow matrix. Zone ids are the
    /// smallest member district index, so they are stable labels.
    pub assignment: Vec<usize>,
    pub q: f64,
    pub threshold: f64,
    pub contiguous: bool,
}

impl ZonePartition {
    pub fn n_zones(&self) -> usize {
        let mut ids: Vec<usize> = self.assignment.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Newman modularity of `partition` on the symmetrized weighted graph.
///
/// With S(i,j) = flow(i,j) + flow(j,i) for i != j and S(i,i) = 2 flow(i,i),
/// T = sum of all S entries, W_c the within-zone total and D_c the degree
/// total of zone c: Q = sum_c [ W_c/T - (D_c/T)^2 ]. The all-in-one-zone
/// partition scores exactly 0.
pub fn modularity(flows: &FlowMatrix, assignment: &[usize]) -> Result<f64> {
    let n = flows.len();
    if assignment.len() != n {
        return Err(Error::validation(format!(
            "assignment covers {} districts, matrix has {n}",
            assignment.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += flows.flow(i, j);
        }
    }
    let total = 2.0 * total; // every directed flow counted once per endpoint
    if total <= 0.0 {
        return Err(Error::validation("graph has zero total edge weight"));
    }

    let mut within: BTreeMap<usize, f64> = BTreeMap::new();
    let mut degree: BTreeMap<usize, f64> = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            let s = if i == j { 2.0 * flows.flow(i, i) } else { flows.tie(i, j) };
            *degree.entry(assignment[i]).or_default() += s;
            if assignment[i] == assignment[j] {
                *within.entry(assignment[i]).or_default() += s;
            }
        }
    }
    // The double loop above adds tie(i,j) at both (i,j) and (j,i), i.e. each
    // undirected edge twice, matching the 2m normalization in `total`.
    let mut q = 0.0;
    for (zone, d) in &degree {
        let w = within.get(zone).copied().unwrap_or(0.0);
        q += w / total - (d / total) * (d / total);
    }
    Ok(q)
}

/// Union-find over district indices; roots are always the smallest member.
#[derive(Debug, Clone)]
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return;
        }
        // Smaller index wins so zone ids are deterministic.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
    }
}

/// One dominant-flow merge pass.
///
/// Each region's dominant link is the neighbor with the largest share of
/// the region's total commuting involvement (between-region ties plus the
/// within-region self-flow at degree convention); the pair is merged when
/// that share reaches `threshold`. Counting within-region commuting in the
/// denominator is what makes iterated merging stop on its own: as zones
/// grow, their internal flows accumulate on the diagonal and every external
/// share shrinks below the threshold. Unions collapse chains in a single
/// pass. The returned assignment maps input regions to merged zone ids
/// (smallest member index); the matrix is re-aggregated at the merged
/// level.
pub fn merge_pass(flows: &FlowMatrix, threshold: f64) -> Result<(FlowMatrix, Vec<usize>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::validation(format!("threshold {threshold} outside (0, 1)")));
    }
    let n = flows.len();
    let mut uf = UnionFind::new(n);

    for i in 0..n {
        let external: f64 = (0..n).filter(|&j| j != i).map(|j| flows.tie(i, j)).sum();
        if external <= 0.0 {
            continue;
        }
        let involvement = external + 2.0 * flows.flow(i, i);
        let mut best_j = None;
        let mut best_tie = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let tie = flows.tie(i, j);
            if tie > best_tie {
                best_tie = tie;
                best_j = Some(j);
            }
            // ties break toward the lower index, which the `>` keeps
        }
        if let Some(j) = best_j {
            if best_tie / involvement >= threshold {
                uf.union(i, j);
            }
        }
    }

    let assignment: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    let merged = aggregate(flows, &assignment)?;
    Ok((merged, assignment))
}

/// Re-aggregates flows and adjacency at the level of `assignment`'s zones.
/// Returned labels are the labels of each zone's smallest member.
fn aggregate(flows: &FlowMatrix, assignment: &[usize]) -> Result<FlowMatrix> {
    let n = flows.len();
    let mut zone_ids: Vec<usize> = assignment.to_vec();
    zone_ids.sort_unstable();
    zone_ids.dedup();
    let index_of: BTreeMap<usize, usize> =
        zone_ids.iter().enumerate().map(|(k, &z)| (z, k)).collect();
    let m = zone_ids.len();

    let mut fm = vec![0.0; m * m];
    let mut adj = vec![false; m * m];
    for i in 0..n {
        let zi = index_of[&assignment[i]];
        for j in 0..n {
            let zj = index_of[&assignment[j]];
            fm[zi * m + zj] += flows.flow(i, j);
            if i != j && flows.adjacent(i, j) {
                adj[zi * m + zj] = true;
                adj[zj * m + zi] = true;
            }
        }
    }
    let labels = zone_ids.iter().map(|&z| flows.labels[z].clone()).collect();
    FlowMatrix::new(labels, fm, adj)
}

/// Iterates merge passes at one threshold until no further merger happens.
/// Returns the fixpoint assignment over the original districts.
fn merge_to_fixpoint(flows: &FlowMatrix, threshold: f64) -> Result<Vec<usize>> {
    let n = flows.len();
    let mut assignment: Vec<usize> = (0..n).collect();
    let mut current = flows.clone();
    loop {
        let (merged, step) = merge_pass(&current, threshold)?;
        if merged.len() == current.len() {
            return Ok(assignment);
        }
        // Rows of `current` are zones sorted by their representative
        // district, so row k corresponds to prev_ids[k]. `step[k]` is the
        // smallest member row of k's merged zone; mapping it back through
        // prev_ids yields the new representative original district.
        let prev_ids: Vec<usize> = {
            let mut ids = assignment.clone();
            ids.sort_unstable();
            ids.dedup();
            ids
        };
        let prev_pos: BTreeMap<usize, usize> =
            prev_ids.iter().enumerate().map(|(k, &z)| (z, k)).collect();
        assignment = assignment.iter().map(|&z| prev_ids[step[prev_pos[&z]]]).collect();
        current = merged;
    }
}

/// Full delineation: fixpoint merging per grid threshold, best-Q selection,
/// contiguity repair, final Q recomputation.
///
/// Thresholds evaluate independently (in parallel with the `parallel`
/// feature). Ties in Q break toward the lower threshold. Contiguity repair
/// runs only when the matrix carries at least one adjacency edge; without
/// geographic information the partition is reported contiguous as-is.
pub fn delineate(flows: &FlowMatrix, threshold_grid: &[f64]) -> Result<ZonePartition> {
    if threshold_grid.is_empty() {
        return Err(Error::validation("threshold grid is empty"));
    }
    if flows.is_empty() {
        return Err(Error::validation("flow matrix is empty"));
    }

    let mut grid: Vec<f64> = threshold_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("thresholds are finite"));

    let candidates: Vec<Result<(f64, Vec<usize>, f64)>> = par::map_indexed(&grid, |_, &t| {
        let assignment = merge_to_fixpoint(flows, t)?;
        let q = modularity(flows, &assignment)?;
        Ok((t, assignment, q))
    });

    let mut best: Option<(f64, Vec<usize>, f64)> = None;
    for cand in candidates {
        let (t, assignment, q) = cand?;
        let better = match &best {
            None => true,
            Some((_, _, best_q)) => q > *best_q, // ties keep the lower threshold
        };
        if better {
            best = Some((t, assignment, q));
        }
    }
    let (threshold, mut assignment, _) = best.expect("grid is nonempty");

    let contiguous = if flows.has_adjacency() {
        repair_contiguity(flows, &mut assignment);
        is_contiguous(flows, &assignment)
    } else {
        // No geographic information supplied: skip repair.
        true
    };
    let q = modularity(flows, &assignment)?;
    Ok(ZonePartition { assignment, q, threshold, contiguous })
}

/// Splits every geographically disconnected zone component off and attaches
/// it to the adjacent zone with the largest symmetrized flow to it (or makes
/// it a zone of its own when nothing is adjacent). Repeats to a fixpoint.
fn repair_contiguity(flows: &FlowMatrix, assignment: &mut Vec<usize>) {
    let n = flows.len();
    canonicalize(assignment);
    // Each pass only reattaches detached components; cap the passes and fall
    // back to splitting whatever is still detached into zones of their own,
    // which is contiguous by construction.
    for pass in 0..=2 * n {
        let mut changed = false;
        let mut zone_ids: Vec<usize> = assignment.clone();
        zone_ids.sort_unstable();
        zone_ids.dedup();

        for &zone in &zone_ids {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == zone).collect();
            let components = adjacency_components(flows, &members);
            if components.len() <= 1 {
                continue;
            }
            // The component holding the zone's id district stays; every
            // other component moves.
            for comp in &components {
                if comp.contains(&zone) {
                    continue;
                }
                let target = if pass < 2 * n {
                    best_adjacent_zone(flows, assignment, comp, zone)
                } else {
                    None
                };
                let new_zone = match target {
                    Some(z) => z,
                    // No adjacent foreign zone: the component becomes its
                    // own zone, keyed by its smallest district.
                    None => *comp.iter().min().expect("component nonempty"),
                };
                for &i in comp {
                    assignment[i] = new_zone;
                }
                changed = true;
            }
        }
        // Renormalize ids to each zone's smallest member.
        canonicalize(assignment);
        if !changed {
            return;
        }
    }
}

/// Connected components of `members` under geographic adjacency, each
/// sorted ascending; deterministic order by smallest member.
fn adjacency_components(flows: &FlowMatrix, members: &[usize]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = members.to_vec();
    let mut components = Vec::new();
    while let Some(&seed) = remaining.first() {
        let mut stack = vec![seed];
        let mut comp = vec![];
        while let Some(i) = stack.pop() {
            if !remaining.contains(&i) {
                continue;
            }
            remaining.retain(|&x| x != i);
            comp.push(i);
            for &j in members {
                if remaining.contains(&j) && flows.adjacent(i, j) {
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components.sort_by_key(|c| c[0]);
    components
}

/// Adjacent zone (other than `own`) with the largest symmetrized flow to the
/// component; ties break toward the lower zone id.
fn best_adjacent_zone(
    flows: &FlowMatrix,
    assignment: &[usize],
    component: &[usize],
    own: usize,
) -> Option<usize> {
    let n = flows.len();
    let mut tie_by_zone: BTreeMap<usize, f64> = BTreeMap::new();
    for &i in component {
        for j in 0..n {
            if component.contains(&j) || assignment[j] == own {
                continue;
            }
            if flows.adjacent(i, j) {
                *tie_by_zone.entry(assignment[j]).or_default() += flows.tie(i, j);
            }
        }
    }
    tie_by_zone
        .into_iter()
        .max_by(|(za, wa), (zb, wb)| {
            wa.partial_cmp(wb).expect("weights finite").then(zb.cmp(za))
        })
        .map(|(z, _)| z)
}

fn canonicalize(assignment: &mut [usize]) {
    let mut min_of_zone: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, &z) in assignment.iter().enumerate() {
        let e = min_of_zone.entry(z).or_insert(i);
        if i < *e {
            *e = i;
        }
    }
    for z in assignment.iter_mut() {
        *z = min_of_zone[z];
    }
}

/// Zone contiguity check used by tests and the partition invariant.
pub fn is_contiguous(flows: &FlowMatrix, assignment: &[usize]) -> bool {
    let n = flows.len();
    let mut zone_ids: Vec<usize> = assignment.to_vec();
    zone_ids.sort_unstable();
    zone_ids.dedup();
    zone_ids.iter().all(|&zone| {
        let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == zone).collect();
        adjacency_components(flows, &members).len() <= 1
    })
}
