//! Shared fixtures for the benchmarks.

use costa_core::graph::{gen_power_law_graph, Graph, PowerLawSpec};
use costa_core::linalg::gaussian_draw;
use costa_core::{DenseMatrix, SeededRng};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    gaussian_draw(&mut SeededRng::new(seed), rows, cols).expect("positive dimensions")
}

pub fn synthetic_graph(n: usize, d: usize, seed: u64) -> Graph {
    let spec = PowerLawSpec { n, d, ..PowerLawSpec::default() };
    gen_power_law_graph(&spec, &mut SeededRng::new(seed)).expect("valid spec")
}
