// Temporary development probe: full-pipeline dry run on the default phantom.
use synaptik_core::adjacency::segment_adjacency;
use synaptik_core::candidates::{pair_candidates, polar_components, site_candidates, CandidateParams};
use synaptik_core::eval::{map_segments, match_predictions, pr_sweep};
use synaptik_core::pruning::{
    apply_scorer, extract_features, label_candidates, prune, train_scorer, TrainConfig, WindowSpec,
};
use synaptik_core::synth::{generate_phantom, oracle_predict, PhantomConfig};

fn main() {
    let t0 = std::time::Instant::now();
    let cfg = PhantomConfig::default();
    let bundle = generate_phantom(&cfg).unwrap();
    println!("[{:?}] phantom: {} connections", t0.elapsed(), bundle.connections.len());

    for (noise, distractors, tag) in [(0.0, 0u32, "clean"), (0.2, 30, "noisy")] {
        let t = std::time::Instant::now();
        let prox = oracle_predict(&bundle.target, noise, distractors, 1234).unwrap();
        let params = CandidateParams::default();
        let (pre, post) = polar_components(&prox, params.tau).unwrap();
        let dims = prox.dims_zyx();
        let pre_sites = site_candidates(&pre, &bundle.gt_seg, params.omega, dims).unwrap();
        let post_sites = site_candidates(&post, &bundle.gt_seg, params.omega, dims).unwrap();
        let adj = segment_adjacency(&bundle.gt_seg);
        let cands = pair_candidates(
            &pre_sites,
            &post_sites,
            &pre,
            &post,
            &adj,
            &params,
            dims,
            prox.spacing_zyx(),
        );
        println!(
            "[{tag}] {} pre comps ({} big sites), {} post comps ({} sites), {} candidates",
            pre.len(),
            pre_sites.len(),
            post.len(),
            post_sites.len(),
            cands.len()
        );

        let window = WindowSpec::default();
        let features: Vec<_> = cands
            .iter()
            .map(|c| {
                extract_features(c, &pre, &post, &bundle.image, &prox, &bundle.gt_seg, &window)
                    .unwrap()
            })
            .collect();
        let labels = label_candidates(
            &cands,
            &pre,
            &post,
            &bundle.gt_seg,
            &bundle.gt_seg,
            &bundle.connections,
        )
        .unwrap();
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        println!("[{tag}] labels: {n_pos} positive / {} total", labels.len());
        if n_pos == 0 || n_pos == labels.len() {
            println!("[{tag}] SINGLE CLASS - cannot train");
            continue;
        }
        let scorer = train_scorer(&features, &labels, &TrainConfig::default()).unwrap();
        let mut scored = cands.clone();
        apply_scorer(&mut scored, &features, &scorer).unwrap();

        let seg_map = map_segments(&bundle.gt_seg, &bundle.gt_seg).unwrap();
        let kept = prune(&scored, 0.5).unwrap();
        let report = match_predictions(&kept, &pre, &post, &bundle.connections, &seg_map).unwrap();
        println!(
            "[{tag}] theta=0.5: kept {} -> tp {} fp {} fn {}",
            kept.len(),
            report.tp,
            report.fp,
            report.fn_
        );

        let thetas: Vec<f64> = (0..20).map(|i| i as f64 * 0.05).collect();
        let curve = pr_sweep(&scored, &pre, &post, &bundle.connections, &seg_map, &thetas).unwrap();
        let best = curve.best_f().unwrap();
        let at0 = &curve.points[0];
        println!(
            "[{tag}] sweep: F(0)={:.4}, best F={:.4} at theta={:.2}  (elapsed {:?})",
            at0.f_score,
            best.f_score,
            best.theta,
            t.elapsed()
        );
    }
}
