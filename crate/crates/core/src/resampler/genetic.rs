//! Genetic fixed-cardinality subset selection maximizing the minimum pairwise
//! image distance (max-min dispersion) within one keypoint cluster.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Keypoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Fraction of each cluster that survives.
    pub selection_ratio: f64,
    pub mutation_rate: f64,
    pub tournament: usize,
    pub elitism: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 32,
            generations: 50,
            selection_ratio: 0.5,
            mutation_rate: 0.1,
            tournament: 3,
            elitism: 2,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.population >= 2
            && self.elitism < self.population
            && self.tournament >= 1
            && self.selection_ratio > 0.0
            && self.selection_ratio <= 1.0
            && (0.0..=1.0).contains(&self.mutation_rate);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid GA config {self:?}")))
        }
    }

    /// Survivors kept from a cluster of `n`: `max(1, ceil(ratio * n))`.
    pub fn subset_size(&self, n: usize) -> usize {
        ((self.selection_ratio * n as f64).ceil() as usize).clamp(1, n.max(1))
    }
}

/// Lexicographic fitness: minimum pairwise distance, then total response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fitness {
    pub min_distance: f64,
    pub total_response: f64,
}

impl Fitness {
    fn cmp(&self, other: &Fitness) -> Ordering {
        self.min_distance
            .total_cmp(&other.min_distance)
            .then(self.total_response.total_cmp(&other.total_response))
    }
}

/// Pairwise image-plane distances of a cluster.
pub struct DistanceTable {
    n: usize,
    d: Vec<f64>,
}

impl DistanceTable {
    pub fn new(points: &[Keypoint]) -> Self {
        let n = points.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = (points[i].x - points[j].x).hypot(points[i].y - points[j].y);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { n, d }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Fitness of the subset `selected`. A single point has infinite spacing.
pub fn fitness(points: &[Keypoint], table: &DistanceTable, selected: &[usize]) -> Fitness {
    let mut min_distance = f64::INFINITY;
    for (a, &i) in selected.iter().enumerate() {
        for &j in &selected[a + 1..] {
            min_distance = min_distance.min(table.get(i, j));
        }
    }
    let total_response = selected.iter().map(|&i| points[i].response).sum();
    Fitness {
        min_distance,
        total_response,
    }
}

#[derive(Clone)]
struct Individual {
    genes: Vec<bool>,
    fitness: Fitness,
}

fn selected(genes: &[bool]) -> Vec<usize> {
    genes
        .iter()
        .enumerate()
        .filter(|(_, g)| **g)
        .map(|(i, _)| i)
        .collect()
}

/// Farthest-point seed: start from the strongest response, then repeatedly add
/// the point farthest from the current selection.
fn greedy_seed(points: &[Keypoint], table: &DistanceTable, m: usize) -> Vec<bool> {
    let n = points.len();
    let mut genes = vec![false; n];
    let first = (0..n)
        .max_by(|&a, &b| {
            points[a]
                .response
                .total_cmp(&points[b].response)
                .then(b.cmp(&a))
        })
        .expect("non-empty cluster");
    genes[first] = true;
    let mut nearest: Vec<f64> = (0..n).map(|j| table.get(first, j)).collect();
    for _ in 1..m {
        let next = (0..n)
            .filter(|&j| !genes[j])
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a)))
            .expect("m <= n");
        genes[next] = true;
        for j in 0..n {
            nearest[j] = nearest[j].min(table.get(next, j));
        }
    }
    genes
}

fn random_genes(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut genes = vec![false; n];
    for i in sample(rng, n, m) {
        genes[i] = true;
    }
    genes
}

/// Forces exactly `m` selected genes by random flips.
fn repair(genes: &mut [bool], m: usize, rng: &mut ChaCha8Rng) {
    let mut on = selected(genes);
    while on.len() > m {
        let k = rng.gen_range(0..on.len());
        genes[on.swap_remove(k)] = false;
    }
    if on.len() < m {
        let mut off: Vec<usize> = (0..genes.len()).filter(|&i| !genes[i]).collect();
        for _ in on.len()..m {
            let k = rng.gen_range(0..off.len());
            genes[off.swap_remove(k)] = true;
        }
    }
}

fn swap_mutation(genes: &mut [bool], rng: &mut ChaCha8Rng) {
    let on = selected(genes);
    let off: Vec<usize> = (0..genes.len()).filter(|&i| !genes[i]).collect();
    if on.is_empty() || off.is_empty() {
        return;
    }
    genes[on[rng.gen_range(0..on.len())]] = false;
    genes[off[rng.gen_range(0..off.len())]] = true;
}

fn tournament<'a>(pop: &'a [Individual], size: usize, rng: &mut ChaCha8Rng) -> &'a Individual {
    let mut best = &pop[rng.gen_range(0..pop.len())];
    for _ in 1..size {
        let cand = &pop[rng.gen_range(0..pop.len())];
        if cand.fitness.cmp(&best.fitness) == Ordering::Greater {
            best = cand;
        }
    }
    best
}

/// Selects `cfg.subset_size(len)` members of `cluster` and returns their
/// indices (ascending). Deterministic for a given `seed`.
pub fn ga_resample_cluster(cluster: &[Keypoint], cfg: &GaConfig, seed: u64) -> Vec<usize> {
    let n = cluster.len();
    if n <= 1 {
        return (0..n).collect();
    }
    let m = cfg.subset_size(n);
    if m == n {
        return (0..n).collect();
    }
    let table = DistanceTable::new(cluster);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |genes: Vec<bool>| {
        let fitness = fitness(cluster, &table, &selected(&genes));
        Individual { genes, fitness }
    };

    let mut pop = Vec::with_capacity(cfg.population);
    pop.push(polish(cluster, &table, eval(greedy_seed(cluster, &table, m))));
    while pop.len() < cfg.population {
        pop.push(eval(random_genes(n, m, &mut rng)));
    }

    for _ in 0..cfg.generations {
        pop.sort_by(|a, b| b.fitness.cmp(&a.fitness));
        let mut next: Vec<Individual> = pop[..cfg.elitism].to_vec();
        while next.len() < cfg.population {
            let a = tournament(&pop, cfg.tournament, &mut rng);
            let b = tournament(&pop, cfg.tournament, &mut rng);
            let mut genes: Vec<bool> = a
                .genes
                .iter()
                .zip(&b.genes)
                .map(|(&x, &y)| if rng.gen_bool(0.5) { x } else { y })
                .collect();
            repair(&mut genes, m, &mut rng);
            if rng.gen_bool(cfg.mutation_rate) {
                swap_mutation(&mut genes, &mut rng);
            }
            // Duplicates are mutated until new, within a bounded number of tries.
            for _ in 0..n {
                if !next.iter().any(|ind| ind.genes == genes) {
                    break;
                }
                swap_mutation(&mut genes, &mut rng);
            }
            next.push(eval(genes));
        }
        pop = next;
    }
    pop.sort_by(|a, b| b.fitness.cmp(&a.fitness));
    let best = pop.swap_remove(0);
    selected(&polish(cluster, &table, best).genes)
}

/// Swap hill climbing. Within a plateau of equal minimum distance, fewer
/// pairs at that minimum counts as progress.
fn polish(points: &[Keypoint], table: &DistanceTable, best: Individual) -> Individual {
    let key = |genes: &[bool]| {
        let sel = selected(genes);
        let f = fitness(points, table, &sel);
        let mut ties = 0usize;
        for (a, &i) in sel.iter().enumerate() {
            for &j in &sel[a + 1..] {
                ties += usize::from(table.get(i, j) <= f.min_distance);
            }
        }
        (f, ties)
    };
    let better = |a: &(Fitness, usize), b: &(Fitness, usize)| {
        a.0.min_distance
            .total_cmp(&b.0.min_distance)
            .then(b.1.cmp(&a.1))
            .then(a.0.total_response.total_cmp(&b.0.total_response))
            == Ordering::Greater
    };
    let mut genes = best.genes;
    let mut current = key(&genes);
    loop {
        let on = selected(&genes);
        let off: Vec<usize> = (0..genes.len()).filter(|&i| !genes[i]).collect();
        let mut improved = false;
        'search: for &i in &on {
            for &j in &off {
                genes[i] = false;
                genes[j] = true;
                let k = key(&genes);
                if better(&k, &current) {
                    current = k;
                    improved = true;
                    break 'search;
                }
                genes[i] = true;
                genes[j] = false;
            }
        }
        if !improved {
            return Individual {
                genes,
                fitness: current.0,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(x: f64, y: f64) -> Keypoint {
        Keypoint {
            x,
            y,
            size: 7.0,
            angle: 0.0,
            response: 1.0,
            octave: 0,
        }
    }

    #[test]
    fn subset_size_formula() {
        let cfg = GaConfig::default();
        assert_eq!(cfg.subset_size(2), 1);
        assert_eq!(cfg.subset_size(7), 4);
        assert_eq!(cfg.subset_size(1), 1);
    }

    #[test]
    fn pair_keeps_one() {
        let pts = vec![at(0.0, 0.0), at(3.0, 4.0)];
        assert_eq!(ga_resample_cluster(&pts, &GaConfig::default(), 1).len(), 1);
    }

    #[test]
    fn collinear_picks_extremes() {
        let pts: Vec<_> = (0..4).map(|i| at(i as f64, 0.0)).collect();
        assert_eq!(ga_resample_cluster(&pts, &GaConfig::default(), 9), vec![0, 3]);
    }

    #[test]
    fn single_survivor_prefers_response() {
        let mut pts = vec![at(0.0, 0.0), at(1.0, 0.0), at(2.0, 0.0)];
        pts[1].response = 5.0;
        let cfg = GaConfig {
            selection_ratio: 0.3,
            ..Default::default()
        };
        assert_eq!(ga_resample_cluster(&pts, &cfg, 3), vec![1]);
    }

    #[test]
    fn seeded_runs_repeat() {
        let pts: Vec<_> = (0..40)
            .map(|i| at((i * 7 % 13) as f64, (i * 11 % 17) as f64))
            .collect();
        let cfg = GaConfig::default();
        assert_eq!(
            ga_resample_cluster(&pts, &cfg, 42),
            ga_resample_cluster(&pts, &cfg, 42)
        );
    }
}
