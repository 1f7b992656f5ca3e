use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{check, BlockObjective, GradcheckOptions, GradcheckReport};
use crate::graph::Var;
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::Tensor;

use super::BlockConfig;

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

/// `C = 4` probe configuration.
pub fn small_cfg() -> BlockConfig {
    BlockConfig {
        channels: 4,
        window_size: 4,
        heads: 2,
        mlp_ratio: 2,
        msconv_kernels: vec![1, 3, 5, 7],
        rdscb_repeat: 2,
        cbam_reduction: 8,
        gn_groups: 2,
        leaky_slope: 0.2,
        residual_zero_init: false,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fill(store: &mut ParamStore, id: ParamId, v: f64) {
    let shape = store.get(id).shape().to_vec();
    store.set(id, Tensor::full(shape, v));
}

/// Gradient check of a block on the given inputs, all params trainable.
pub fn gradcheck_block(
    name: &str,
    store: &ParamStore,
    inputs: &[Tensor],
    forward: impl Fn(&mut Session, &[Var]) -> Var,
) -> GradcheckReport {
    let opts = GradcheckOptions {
        coords_per_tensor: 4,
        ..Default::default()
    };
    let obj = BlockObjective {
        forward,
        weight_seed: 77,
    };
    check(name, &obj, inputs, store, &opts)
}

pub fn assert_gradcheck(r: &GradcheckReport) {
    assert!(
        r.passed(1e-4),
        "{}: max rel error {:.3e} ({:?}), checked {}",
        r.name,
        r.max_rel_error,
        r.worst,
        r.checked
    );
}
