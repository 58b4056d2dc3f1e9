//! Shared inputs for the kernel benchmarks.

use zoac_core::{
    DirectionAdvantage, EnvSpec, IterationBatch, MountainCarSpec, NoiseTable, PolicyKind, PolicySpec,
    RngStream, RolloutParams, RunningStat, Sampler,
};

/// Policy, parameters and noise table of one benchmark setting.
pub struct Fixture {
    pub policy: PolicySpec,
    pub theta: Vec<f64>,
    pub table: NoiseTable,
    pub normalizer: RunningStat,
}

impl Fixture {
    pub fn new(kind: PolicyKind, obs: usize, act: usize, hidden: Vec<usize>, table_size: usize) -> Self {
        let policy = match kind {
            PolicyKind::Linear => PolicySpec::linear(obs, act),
            _ => PolicySpec::neural(kind, obs, act, hidden),
        };
        let mut stream = RngStream::new(1);
        let theta = policy.initial_params(&mut stream).into_inner();
        let table = NoiseTable::create(2, table_size, theta.len()).expect("noise table");
        Self {
            policy,
            theta,
            table,
            normalizer: RunningStat::new(obs),
        }
    }

    /// The 111 -> (64, 64) -> 8 network.
    pub fn wide(kind: PolicyKind) -> Self {
        Self::new(kind, 111, 8, vec![64, 64], 200_000)
    }

    pub fn mountain_car() -> Self {
        Self::new(PolicyKind::Linear, 2, 1, Vec::new(), 100_000)
    }

    pub fn params(&self, sigma: f64) -> RolloutParams<'_> {
        RolloutParams {
            policy: &self.policy,
            theta: &self.theta,
            normalizer: &self.normalizer,
            normalize_obs: false,
            table: &self.table,
            master_seed: 3,
            sigma,
            rollout_length: 10,
            segments_per_worker: 16,
        }
    }

    /// `count` directions with pseudo-random scores.
    pub fn directions(&self, count: usize) -> Vec<DirectionAdvantage> {
        let mut stream = RngStream::new(4);
        (0..count)
            .map(|_| DirectionAdvantage {
                noise_idx: self.table.draw_index(&mut stream),
                advantage: stream.next_gaussian(),
                len: 10,
            })
            .collect()
    }
}

pub fn mountain_car_env() -> EnvSpec {
    EnvSpec::MountainCar(MountainCarSpec::default())
}

/// One iteration of mountain-car data from eight workers.
pub fn mountain_car_batch(fixture: &Fixture) -> IterationBatch {
    let mut sampler = Sampler::new(&mountain_car_env(), 8, 5, 1).expect("sampler");
    sampler.collect_iteration(&fixture.params(1.0), 0).expect("collect")
}
