//! Fixtures shared by the benchmarks.

use hlm_gibbs::gibbs::InitStrategy;
use hlm_gibbs::sim::{apply_missingness, simulate_dataset};
use hlm_gibbs::{ChainState, Dataset, GibbsModel, HlmSpec, PriorConfig, RngStream, Scenario, SimulationDesign};

/// A masked baseline data set with its spec and default priors.
pub struct Fixture {
    pub spec: HlmSpec,
    pub data: Dataset,
    pub priors: PriorConfig,
}

impl Fixture {
    pub fn baseline(clusters: usize, seed: u64) -> Self {
        let design = SimulationDesign::new(Scenario::Baseline, clusters);
        let mut rng = RngStream::new(seed, 0);
        let complete = simulate_dataset(&design, &mut rng).expect("valid design");
        let data = apply_missingness(&complete, &design.masks, &mut rng).expect("valid masks");
        let priors = PriorConfig::from_data(&data).expect("enough complete clusters");
        Self { spec: design.spec(), data, priors }
    }

    pub fn model(&self) -> GibbsModel<'_> {
        GibbsModel::new(&self.spec, &self.data, &self.priors).expect("consistent fixture")
    }

    pub fn initial_state(&self, rng: &mut RngStream) -> ChainState {
        InitStrategy::MeanFill.initial_state(&self.spec, &self.data, &self.priors, rng).expect("fixture initialises")
    }
}
