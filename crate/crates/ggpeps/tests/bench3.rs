use ggpeps::driver::{loop_set, measure_wilson};
use ggpeps::ansatz::{Ansatz, LayerParams};
use ggpeps::gstate::LinkBlockCache;
use ggpeps::lattice::LatticeGeom;
use ggpeps::sampler::MCConfig;

#[test]
fn probe_w12_at_strong_coupling() {
    let geom = LatticeGeom::new(4, 3).unwrap();
    let blocks = LinkBlockCache::new(3);
    let ansatz = Ansatz::new(geom, vec![LayerParams { y: -0.0107, z: 0.2688 }]).unwrap();
    let cfg = MCConfig { warmup_steps: 5000, sample_steps: 2_000_000, seed: 123, recompute_interval: 1000, chains: 1, thin: 1, n_bins: 50 };
    let rows = measure_wilson(&ansatz, &blocks, &loop_set(4, 1), &cfg).unwrap();
    for r in &rows {
        println!("W({},{}) = {:.6} ± {:.6}  ({:.1}σ)", r.r1, r.r2, r.re_w, r.err_re, r.re_w / r.err_re);
    }
}
