use specmatch_core::augment::{sample_views, AugmentPolicy, PolicyPreset};
use specmatch_core::encoder::{gradient_check, EncoderDims, EncoderParams, GradCheckConfig};
use specmatch_core::graph::{generate_sbm, SbmConfig};
use specmatch_core::loss::{AdjacencyMode, LossConfig};
use specmatch_core::{seed, Graph};

fn sbm_views(n: usize, seed_base: u64) -> (Vec<Graph>, Vec<Graph>) {
    let data = generate_sbm(&SbmConfig {
        n_graphs: n,
        seed: seed_base,
        ..SbmConfig::default()
    })
    .unwrap();
    let policy = AugmentPolicy::preset(PolicyPreset::SocialDense);
    let mut rng = seed::rng(seed_base);
    data.graphs()
        .iter()
        .map(|g| sample_views(g, &policy, &mut rng).unwrap())
        .unzip()
}

#[test]
fn soft_objective_gradient_matches_finite_differences() {
    let (v1, v2) = sbm_views(8, 0);
    let params = EncoderParams::init(EncoderDims::default(), 0).unwrap();
    let checks = gradient_check(&params, &v1, &v2, &LossConfig::default(), &GradCheckConfig::default()).unwrap();
    assert_eq!(checks.len(), 20 * 4);
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .unwrap();
    println!("worst coordinate: {worst:?}");
    for c in &checks {
        assert!(c.rel_err <= 1e-4, "{c:?}");
    }
}

#[test]
fn gradient_check_holds_across_seeds_and_settings() {
    for (s, beta, percentile) in [(1, 1.0, 60.0), (2, 0.0, 80.0), (3, 1.5, 90.0)] {
        let (v1, v2) = sbm_views(8, s);
        let dims = EncoderDims {
            hidden: 16,
            layers: 2,
            out_dim: 8,
            ..EncoderDims::default()
        };
        let params = EncoderParams::init(dims, s).unwrap();
        let loss = LossConfig {
            beta,
            percentile,
            adjacency: AdjacencyMode::Soft,
            ..LossConfig::default()
        };
        let cfg = GradCheckConfig {
            coords_per_group: 10,
            seed: s,
            ..GradCheckConfig::default()
        };
        for c in gradient_check(&params, &v1, &v2, &loss, &cfg).unwrap() {
            assert!(c.rel_err <= 1e-4, "seed {s}: {c:?}");
        }
    }
}

#[test]
fn binary_mode_gradient_is_contrastive_only() {
    let (v1, v2) = sbm_views(8, 4);
    let params = EncoderParams::init(EncoderDims::default(), 4).unwrap();
    let binary = LossConfig {
        adjacency: AdjacencyMode::Binary,
        ..LossConfig::default()
    };
    let checks = gradient_check(&params, &v1, &v2, &binary, &GradCheckConfig::default()).unwrap();
    for c in &checks {
        assert!(c.rel_err <= 1e-4, "{c:?}");
    }
}
