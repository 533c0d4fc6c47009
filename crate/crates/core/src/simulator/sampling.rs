//! Daily stratified Bernoulli sampling with per-region inclusion
//! probabilities and resampling cooldowns, plus the response mechanism.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numeric::logistic;

use super::config::SimConfig;
use super::population::{CompiledLinear, Population};
use super::seeds::{derive_seed, STREAM_RESPONSE, STREAM_SAMPLING};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDesign {
    /// Inclusion probability per region index.
    pub inclusion: Vec<f64>,
    /// Cooldown in days per region index.
    pub cooldown_days: Vec<u32>,
    pub seed: u64,
}

impl SamplingDesign {
    pub fn from_config(config: &SimConfig, seed: u64) -> Self {
        SamplingDesign {
            inclusion: config.inclusion_probabilities(),
            cooldown_days: config.regions.iter().map(|r| config.cooldown.days(r.density)).collect(),
            seed,
        }
    }
}

/// First day each frame unit may be sampled again, aligned with the frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooldownState {
    next_eligible: Vec<u32>,
}

impl CooldownState {
    pub fn new(frame_len: usize) -> Self {
        CooldownState { next_eligible: vec![0; frame_len] }
    }

    pub fn is_eligible(&self, position: usize, day: u32) -> bool {
        self.next_eligible[position] <= day
    }
}

/// Samples eligible frame units region by region. Returns positions into
/// `frame` and the updated cooldown state. Deterministic in `(seed, day)`.
pub fn draw_daily_sample(
    population: &Population,
    frame: &[usize],
    day: u32,
    design: &SamplingDesign,
    mut state: CooldownState,
) -> (Vec<usize>, CooldownState) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(design.seed, STREAM_SAMPLING, day as u64));
    let regions = design.inclusion.len();
    let mut eligible = vec![0usize; regions];
    let mut sampled = Vec::new();
    for (position, &unit) in frame.iter().enumerate() {
        if !state.is_eligible(position, day) {
            continue;
        }
        let region = population.region(unit);
        eligible[region] += 1;
        let u: f64 = rng.random();
        if u < design.inclusion[region] {
            sampled.push(position);
            state.next_eligible[position] = day + design.cooldown_days[region];
        }
    }
    for (r, &count) in eligible.iter().enumerate() {
        if count == 0 {
            warn!("day {day}: region `{}` has no eligible frame units", population.region_names()[r]);
        }
    }
    (sampled, state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Response {
    /// Position into the frame.
    pub position: usize,
    pub answered_count: u32,
}

/// Response draws for the sampled positions, in order. Missing at random
/// given covariates unless the config adds outcome dependence.
pub fn simulate_response(
    population: &Population,
    frame: &[usize],
    sampled: &[usize],
    config: &SimConfig,
    seed: u64,
    day: u32,
) -> Vec<Option<Response>> {
    let model = CompiledLinear::new(&config.response.linear, config);
    let mnar = config.response.outcome_dependence;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_RESPONSE, day as u64));
    sampled
        .iter()
        .map(|&position| {
            let unit = frame[position];
            let mut eta = model.eval(population.region(unit), population.codes(unit));
            if mnar != 0.0 {
                eta += mnar * population.value(unit);
            }
            let responds = rng.random::<f64>() < logistic(eta);
            let partial = rng.random::<f64>() < config.response.partial_rate;
            // a fixed questionnaire length; partial responders stop after one answer
            responds.then_some(Response { position, answered_count: if partial { 1 } else { 12 } })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::config::{CovariateGenerator, Density, LinearSpec, RegionSpec};
    use crate::simulator::population::generate_population;
    use std::collections::BTreeMap;

    fn config(p_a: f64, p_b: f64) -> SimConfig {
        SimConfig {
            population_size: 50_000,
            regions: vec![
                RegionSpec { name: "a".into(), share: 0.5, density: Density::Low, inclusion_probability: Some(p_a) },
                RegionSpec { name: "b".into(), share: 0.5, density: Density::High, inclusion_probability: Some(p_b) },
            ],
            covariates: vec![CovariateGenerator {
                name: "age".into(),
                levels: vec!["young".into(), "old".into()],
                probabilities: vec![0.7, 0.3],
                by_region: BTreeMap::new(),
            }],
            ..SimConfig::default()
        }
    }

    #[test]
    fn certainty_sampling_takes_everyone() {
        let c = config(1.0, 1.0);
        let world = generate_population(&c).unwrap();
        let frame = world.population.frame();
        let design = SamplingDesign::from_config(&c, 3);
        let (sampled, _) = draw_daily_sample(&world.population, &frame, 0, &design, CooldownState::new(frame.len()));
        assert_eq!(sampled.len(), frame.len());
    }

    #[test]
    fn cooldown_blocks_until_expiry() {
        let mut c = config(1.0, 1.0);
        c.population_size = 500;
        let world = generate_population(&c).unwrap();
        let frame = world.population.frame();
        let design = SamplingDesign::from_config(&c, 3);
        let (day0, state) = draw_daily_sample(&world.population, &frame, 0, &design, CooldownState::new(frame.len()));
        assert_eq!(day0.len(), frame.len());
        let low: Vec<usize> = day0.iter().copied().filter(|&p| world.population.region(frame[p]) == 0).collect();
        let mut state = state;
        for day in 1..30 {
            let (s, next) = draw_daily_sample(&world.population, &frame, day, &design, state);
            assert!(s.iter().all(|p| !low.contains(p)), "day {day}");
            state = next;
        }
        let (day30, _) = draw_daily_sample(&world.population, &frame, 30, &design, state);
        assert_eq!(day30, low);
    }

    #[test]
    fn sampling_fractions_track_inclusion_ratio() {
        let c = config(0.01, 0.05);
        let world = generate_population(&c).unwrap();
        let frame = world.population.frame();
        let design = SamplingDesign::from_config(&c, 9);
        let (sampled, _) = draw_daily_sample(&world.population, &frame, 0, &design, CooldownState::new(frame.len()));
        let mut hits = [0f64; 2];
        let mut sizes = [0f64; 2];
        for &u in &frame {
            sizes[world.population.region(u)] += 1.0;
        }
        for &p in &sampled {
            hits[world.population.region(frame[p])] += 1.0;
        }
        for (r, p) in [0.01, 0.05].into_iter().enumerate() {
            let sd = (sizes[r] * p * (1.0 - p)).sqrt();
            assert!((hits[r] - sizes[r] * p).abs() < 4.0 * sd, "region {r}: {} of {}", hits[r], sizes[r]);
        }
    }

    #[test]
    fn constant_propensity_response_rate() {
        let mut c = config(1.0, 1.0);
        c.response.linear = LinearSpec { intercept: -1.0, coefficients: BTreeMap::new() };
        let world = generate_population(&c).unwrap();
        let frame = world.population.frame();
        let sampled: Vec<usize> = (0..frame.len()).collect();
        let responses = simulate_response(&world.population, &frame, &sampled, &c, 5, 0);
        let rate = responses.iter().filter(|r| r.is_some()).count() as f64 / sampled.len() as f64;
        let p = logistic(-1.0);
        let sd = (p * (1.0 - p) / sampled.len() as f64).sqrt();
        assert!((rate - p).abs() < 4.0 * sd, "{rate}");
    }

    #[test]
    fn favoured_group_is_over_represented_among_responders() {
        let mut c = config(1.0, 1.0);
        c.response.linear = LinearSpec { intercept: -1.5, coefficients: [("age=old".to_string(), 1.5)].into() };
        let world = generate_population(&c).unwrap();
        let frame = world.population.frame();
        let sampled: Vec<usize> = (0..frame.len()).collect();
        let responses = simulate_response(&world.population, &frame, &sampled, &c, 5, 0);
        let old = |p: usize| world.population.codes(frame[p])[0] == 1;
        let frame_share = (0..frame.len()).filter(|&p| old(p)).count() as f64 / frame.len() as f64;
        let responders: Vec<usize> = responses.iter().flatten().map(|r| r.position).collect();
        let resp_share = responders.iter().filter(|&&p| old(p)).count() as f64 / responders.len() as f64;
        assert!(resp_share > frame_share + 0.1, "{resp_share} vs {frame_share}");
    }
}
