use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MaskGenerator, SamplingMask};
use crate::error::{invalid, Error, Result};
use crate::rng::{rng_from, SmileRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    /// Zero returns the best seed unchanged.
    pub generations: usize,
    /// Per-sampled-line probability of moving the line to a free position.
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub elitism: usize,
    pub tournament: usize,
    /// Pseudo-replica trials per fitness evaluation.
    pub fitness_trials: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 50,
            mutation_rate: 0.05,
            crossover_rate: 0.8,
            elitism: 2,
            tournament: 3,
            fitness_trials: 16,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return invalid(format!("population {} must be >= 4", self.population));
        }
        if self.elitism < 1 || self.elitism >= self.population {
            return invalid(format!("elitism {} must be in [1, population)", self.elitism));
        }
        if self.tournament < 1 {
            return invalid("tournament size must be >= 1");
        }
        for (name, p) in [("mutation_rate", self.mutation_rate), ("crossover_rate", self.crossover_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GaOutcome {
    pub best: SamplingMask,
    pub best_fitness: f64,
    /// Best-so-far fitness after the initial population and each generation.
    pub trace: Vec<f64>,
    pub seed_fitness: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Clone)]
struct Individual {
    keep: Vec<bool>,
    fitness: f64,
}

fn rank_key(f: f64) -> f64 {
    if f.is_finite() {
        f
    } else {
        f64::INFINITY
    }
}

fn compare(a: &Individual, b: &Individual) -> Ordering {
    rank_key(a.fitness).total_cmp(&rank_key(b.fitness)).then_with(|| a.keep.cmp(&b.keep))
}

fn indices(keep: &[bool]) -> Vec<usize> {
    keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
}

/// Add or drop random lines until exactly `budget` are kept.
fn repair(keep: &mut [bool], budget: usize, rng: &mut SmileRng) {
    let mut count = keep.iter().filter(|&&k| k).count();
    while count < budget {
        let free: Vec<usize> = keep.iter().enumerate().filter(|(_, &k)| !k).map(|(i, _)| i).collect();
        keep[*free.choose(rng).unwrap()] = true;
        count += 1;
    }
    while count > budget {
        let on = indices(keep);
        keep[*on.choose(rng).unwrap()] = false;
        count -= 1;
    }
}

fn crossover(a: &[bool], b: &[bool], budget: usize, rng: &mut SmileRng) -> Vec<bool> {
    let ia = indices(a);
    let ib = indices(b);
    let cut = rng.random_range(1..budget.max(2));
    let mut keep = vec![false; a.len()];
    for &i in ia.iter().take(cut).chain(ib.iter().skip(cut)) {
        keep[i] = true;
    }
    repair(&mut keep, budget, rng);
    keep
}

fn mutate(keep: &mut [bool], rate: f64, rng: &mut SmileRng) {
    for i in indices(keep) {
        if rng.random::<f64>() < rate {
            let free: Vec<usize> = keep.iter().enumerate().filter(|(_, &k)| !k).map(|(j, _)| j).collect();
            if let Some(&j) = free.choose(rng) {
                keep[i] = false;
                keep[j] = true;
            }
        }
    }
}

fn tournament<'a>(pop: &'a [Individual], size: usize, rng: &mut SmileRng) -> &'a Individual {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..size {
        let c = &pop[rng.random_range(0..pop.len())];
        if compare(c, best) == Ordering::Less {
            best = c;
        }
    }
    best
}

/// Minimize `fitness` over fixed-budget masks, starting from `seeds`.
///
/// Fitness calls within a generation run in parallel and are cached by
/// mask; results are gathered by position so the run is deterministic for
/// a given config seed.
pub fn ga_optimize<F>(cfg: &GaConfig, fitness: F, seeds: &[SamplingMask]) -> Result<GaOutcome>
where
    F: Fn(&SamplingMask) -> f64 + Sync,
{
    cfg.validate()?;
    let first = seeds.first().ok_or_else(|| Error::InvalidArgument("GA needs at least one seed mask".into()))?;
    let (n_pe, accel, budget) = (first.n_pe(), first.accel(), first.count());
    if seeds.iter().any(|m| m.n_pe() != n_pe || m.accel() != accel || m.count() != budget) {
        return invalid("seed masks must share PE length, acceleration and sample count");
    }
    let generator = MaskGenerator::Ga { seed: cfg.seed };
    let to_mask = |keep: &[bool]| SamplingMask::new(keep.to_vec(), accel, generator.clone()).expect("budget >= 1");

    let mut cache: HashMap<Vec<bool>, f64> = HashMap::new();
    let mut evaluations = 0;
    let mut evaluate = |batch: Vec<Vec<bool>>, cache: &mut HashMap<Vec<bool>, f64>| -> Vec<Individual> {
        let mut todo: Vec<Vec<bool>> = batch.iter().filter(|k| !cache.contains_key(*k)).cloned().collect();
        todo.sort();
        todo.dedup();
        let scores: Vec<f64> = todo.par_iter().map(|k| fitness(&to_mask(k))).collect();
        evaluations += todo.len();
        for (k, f) in todo.into_iter().zip(scores) {
            cache.insert(k, f);
        }
        batch.into_iter().map(|keep| Individual { fitness: cache[&keep], keep }).collect()
    };

    let seed_inds = evaluate(seeds.iter().map(|m| m.keep().to_vec()).collect(), &mut cache);
    let seed_fitness: Vec<f64> = seed_inds.iter().map(|i| i.fitness).collect();
    if let Some(bad) = seed_fitness.iter().position(|f| !f.is_finite()) {
        return Err(Error::NonFinite(format!("fitness of seed mask {bad} is {}", seed_fitness[bad])));
    }

    let mut rng = rng_from(cfg.seed, 0x6761);
    let mut initial: Vec<Vec<bool>> = seeds.iter().map(|m| m.keep().to_vec()).collect();
    initial.truncate(cfg.population);
    let mut i = 0;
    while initial.len() < cfg.population {
        let mut keep = seeds[i % seeds.len()].keep().to_vec();
        mutate(&mut keep, cfg.mutation_rate.max(1.0 / budget as f64), &mut rng);
        initial.push(keep);
        i += 1;
    }
    let mut pop = evaluate(initial, &mut cache);
    pop.sort_by(compare);
    let mut best = seed_inds.iter().chain(pop.iter()).min_by(|a, b| compare(a, b)).unwrap().clone();
    let mut trace = vec![best.fitness];

    for generation in 0..cfg.generations {
        let mut children: Vec<Vec<bool>> = pop.iter().take(cfg.elitism).map(|i| i.keep.clone()).collect();
        while children.len() < cfg.population {
            let a = tournament(&pop, cfg.tournament, &mut rng);
            let b = tournament(&pop, cfg.tournament, &mut rng);
            let mut child = if rng.random::<f64>() < cfg.crossover_rate {
                crossover(&a.keep, &b.keep, budget, &mut rng)
            } else {
                a.keep.clone()
            };
            mutate(&mut child, cfg.mutation_rate, &mut rng);
            debug_assert_eq!(child.iter().filter(|&&k| k).count(), budget);
            children.push(child);
        }
        pop = evaluate(children, &mut cache);
        if pop.iter().all(|i| !i.fitness.is_finite()) {
            return Err(Error::NonFinite(format!("every individual of generation {generation} has non-finite fitness")));
        }
        pop.sort_by(compare);
        if compare(&pop[0], &best) == Ordering::Less {
            best = pop[0].clone();
        }
        trace.push(best.fitness);
    }

    let best_mask = if seeds.iter().any(|m| m.keep() == best.keep.as_slice()) && cfg.generations == 0 {
        seeds.iter().find(|m| m.keep() == best.keep.as_slice()).unwrap().clone()
    } else {
        to_mask(&best.keep)
    };
    Ok(GaOutcome { best: best_mask, best_fitness: best.fitness, trace, seed_fitness, evaluations })
}
