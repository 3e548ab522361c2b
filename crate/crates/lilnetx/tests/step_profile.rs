use lilnetx::config::RunConfig;
use lilnetx::data::{assemble_batch, generate_synth_mnist, load_dataset};
use lilnetx::entropy::rate_loss;
use lilnetx::loss::xent_loss;
use lilnetx::net::Mode;
use lilnetx::train::TrainedModel;
use std::time::Instant;

#[test]
fn profile_step_components() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.data_dir = Some(dir.path().to_path_buf());
    generate_synth_mnist(&dir.path().join("mnist-synth"), 256, 64, 1).unwrap();
    let (train, _) = load_dataset(cfg.dataset, &cfg.resolve_data_dir()).unwrap();
    let mut model = TrainedModel::init(&cfg).unwrap();
    let idx: Vec<usize> = (0..128).collect();
    let (batch, labels) = assemble_batch(&train, &idx, None);

    let reps = 10;
    let t = Instant::now();
    let mut weights = model.decode_weights().unwrap();
    for _ in 0..reps { weights = model.decode_weights().unwrap(); }
    println!("decode_weights: {:.1} ms", t.elapsed().as_secs_f64()*1e3/(reps as f64+1.0));

    let t = Instant::now();
    let mut fw = None;
    for _ in 0..reps { fw = Some(model.net.forward(&weights, &batch, Mode::Train).unwrap()); }
    println!("forward: {:.1} ms", t.elapsed().as_secs_f64()*1e3/reps as f64);
    let (logits, cache) = fw.unwrap();

    let (_, grad_logits) = xent_loss(&logits, &labels).unwrap();
    let t = Instant::now();
    for _ in 0..reps { model.net.backward(&weights, &cache, &grad_logits).unwrap(); }
    println!("backward: {:.1} ms", t.elapsed().as_secs_f64()*1e3/reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        for gi in 0..model.groups.len() {
            let members: Vec<_> = model.groups[gi].members.iter().map(|&id| model.latents[id].as_ref().unwrap()).collect();
            let noise: Vec<Vec<f32>> = members.iter().map(|m| vec![0.1f32; m.surrogate.len()]).collect();
            rate_loss(&members, &model.densities[gi], Some(&noise), true).unwrap();
        }
    }
    println!("rate_loss(with grads): {:.1} ms", t.elapsed().as_secs_f64()*1e3/reps as f64);
}
