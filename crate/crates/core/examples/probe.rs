use cornergraph::geometry::build_training_candidates;
use cornergraph::model::{Model, ModelConfig, PreparedSample};
use cornergraph::synth::generate_sample;
use rand::SeedableRng;
use std::time::Instant;

fn main() {
    let model = Model::<f32>::new(ModelConfig::default(), 1);
    let sample = generate_sample(3, 64, 64, 1);
    let prepared = PreparedSample::<f32>::prepare(&sample, 2.0);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
    let cands = build_training_candidates(&[], &prepared.graph, 2.0, 64, &mut rng).unwrap();

    for round in 0..3 {
        let t0 = Instant::now();
        let mut fwd = model.forward();
        let branch = fwd.corner_branch(&prepared.image);
        let t1 = Instant::now();
        let scores = fwd.candidate_scores(&branch, &cands);
        let t2 = Instant::now();
        let losses = fwd.losses(&branch, &scores, &cands, &prepared.target_conf, &prepared.target_seg);
        let _ = fwd.tape.value(losses.total);
        let t3 = Instant::now();
        let _g = fwd.tape.backward(losses.total);
        let t4 = Instant::now();
        println!(
            "round {round}: corner_branch {:?}  candidates {:?}  losses {:?}  backward {:?}  TOTAL {:?}",
            t1 - t0, t2 - t1, t3 - t2, t4 - t3, t4 - t0
        );
    }
}
