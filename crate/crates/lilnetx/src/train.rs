//! The joint training loop: cross-entropy on decoded weights, the λ_I-scaled
//! rate term on noise-smoothed surrogates, and both sparsity penalties on the
//! noiseless surrogates, driven by two Adam optimizers (one for the model
//! parameters and decoders, one for the entropy model).

use crate::arch::ArchDescriptor;
use crate::codec::{self, ModelState, Reader, Writer};
use crate::config::RunConfig;
use crate::data::{assemble_batch, load_dataset, Dataset};
use crate::entropy::{build_pmf_table, rate_loss, FactorizedDensity};
use crate::layers::Layer;
use crate::loss::{top1_count, xent_loss};
use crate::net::{Mode, NetGrads, Network, WeightSet};
use crate::optim::{cosine_lr, AdamState};
use crate::reparam::{
    decode, init_group, layer_weight_shape, partition_model, ste_backward, LatentTensor,
    ParameterGroup,
};
use crate::sparse::{sparsity_report, SparsityReport};
use crate::sparsity::compute_loss;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Full-precision training state (surrogates, decoders, entropy models, and
/// the network's uncompressed parameters).
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub arch: ArchDescriptor,
    pub net: Network<f32>,
    pub groups: Vec<ParameterGroup<f32>>,
    pub latents: Vec<Option<LatentTensor<f32>>>,
    pub densities: Vec<FactorizedDensity<f32>>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub xent: f64,
    pub rate_bits: f64,
    pub unstructured_loss: f64,
    pub group_loss: f64,
    pub top1: f64,
    /// Entropy-model estimate of the coded latent payload, in bytes.
    pub est_coded_bytes: f64,
    pub slice_sparsity: f64,
    pub unstructured_sparsity: f64,
    pub sflops_fraction: f64,
}

pub const METRICS_HEADER: &str = "epoch,xent,rate_bits,unstructured_loss,group_loss,top1,\
                                  est_coded_bytes,slice_sparsity,unstructured_sparsity,sflops_fraction";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.xent,
            self.rate_bits,
            self.unstructured_loss,
            self.group_loss,
            self.top1,
            self.est_coded_bytes,
            self.slice_sparsity,
            self.unstructured_sparsity,
            self.sflops_fraction
        )
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalSummary {
    pub top1: f64,
    pub est_coded_bytes: f64,
    pub report: SparsityReport,
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub metrics: Vec<MetricsRow>,
    pub lnx_bytes: Vec<u8>,
    pub final_eval: EvalSummary,
}

impl TrainedModel {
    /// Fresh model with variance-matched initialization.
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        let arch = cfg.arch_descriptor()?;
        let net: Network<f32> = arch.build()?;
        let mut groups = partition_model(&net)?;
        let master = &mut ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init_rng = ChaCha8Rng::seed_from_u64(master.gen());
        let mut density_rng = ChaCha8Rng::seed_from_u64(master.gen());
        let mut latents: Vec<Option<LatentTensor<f32>>> = vec![None; net.layers.len()];
        let mut densities = Vec::with_capacity(groups.len());
        for group in &mut groups {
            let shapes: Vec<_> = group
                .members
                .iter()
                .map(|&id| layer_weight_shape(&net.layers[id]).expect("compressible member"))
                .collect();
            let group_latents = init_group(group, &shapes, cfg.b_min, &mut init_rng)?;
            for (&id, latent) in group.members.iter().zip(group_latents) {
                latents[id] = Some(latent);
            }
            densities.push(FactorizedDensity::new(group.l, &mut density_rng));
        }
        Ok(Self { arch, net, groups, latents, densities })
    }

    /// Decode every compressible layer's weights from rounded latents.
    pub fn decode_weights(&self) -> Result<WeightSet<f32>> {
        let mut weights: WeightSet<f32> = vec![None; self.net.layers.len()];
        for group in &self.groups {
            for &id in &group.members {
                let latent = self.latents[id].as_ref().expect("latent for member");
                let quantized = latent.quantized()?;
                weights[id] = Some(decode(&quantized, latent.rows, latent.l, &group.psi)?);
            }
        }
        Ok(weights)
    }

    /// Latent references of one group, in member order.
    fn group_latents(&self, gi: usize) -> Vec<&LatentTensor<f32>> {
        self.groups[gi]
            .members
            .iter()
            .map(|&id| self.latents[id].as_ref().expect("latent"))
            .collect()
    }

    /// Noiseless rate of the rounded latents under the current densities.
    pub fn eval_rate_bits(&self) -> Result<f64> {
        let mut bits = 0.0;
        for gi in 0..self.groups.len() {
            let members = self.group_latents(gi);
            let (b, _) = rate_loss(&members, &self.densities[gi], None, false)?;
            bits += b as f64;
        }
        Ok(bits)
    }

    /// Freeze PMF tables for the current rounded latents.
    pub fn build_tables(&self) -> Result<Vec<crate::entropy::PmfTable>> {
        let mut tables = Vec::with_capacity(self.groups.len());
        for (gi, group) in self.groups.iter().enumerate() {
            let mut ranges = vec![(i32::MAX, i32::MIN); group.l];
            for &id in &group.members {
                let symbols = self.latents[id].as_ref().expect("latent").quantized_i32()?;
                for (idx, &s) in symbols.iter().enumerate() {
                    let dim = idx % group.l;
                    ranges[dim].0 = ranges[dim].0.min(s);
                    ranges[dim].1 = ranges[dim].1.max(s);
                }
            }
            for r in &mut ranges {
                if r.0 > r.1 {
                    *r = (0, 0);
                }
            }
            tables.push(build_pmf_table(&self.densities[gi], &ranges)?);
        }
        Ok(tables)
    }

    /// Serialize to `.lnx` bytes: freeze tables and round the surrogates.
    pub fn to_lnx(&self) -> Result<Vec<u8>> {
        let tables = self.build_tables()?;
        let mut rounded = self.latents.clone();
        for latent in rounded.iter_mut().flatten() {
            latent.surrogate = latent.quantized()?;
        }
        let state = ModelState {
            arch: self.arch.clone(),
            net: self.net.clone(),
            groups: self.groups.clone(),
            latents: rounded,
            tables,
        };
        codec::serialize_model(&state)
    }

    /// Rebuild a trainable model from a deserialized `.lnx` state. The
    /// surrogates are the stored integers; entropy models restart fresh.
    pub fn from_model_state(state: ModelState, seed: u64) -> Self {
        let mut density_rng = ChaCha8Rng::seed_from_u64(seed);
        let densities = state
            .groups
            .iter()
            .map(|g| FactorizedDensity::new(g.l, &mut density_rng))
            .collect();
        Self {
            arch: state.arch,
            net: state.net,
            groups: state.groups,
            latents: state.latents,
            densities,
        }
    }
}

// ---------------------------------------------------------------------------
// evaluation

/// Top-1 accuracy over a full split in eval mode (rounded latents, running
/// batchnorm statistics).
pub fn evaluate_accuracy(
    model: &mut TrainedModel,
    data: &Dataset,
    batch_size: usize,
) -> Result<f64> {
    let weights = model.decode_weights()?;
    let mut correct = 0usize;
    let mut at = 0usize;
    while at < data.n {
        let hi = (at + batch_size).min(data.n);
        let indices: Vec<usize> = (at..hi).collect();
        let (batch, labels) = assemble_batch(data, &indices, None);
        let (logits, _) = model.net.forward(&weights, &batch, Mode::Eval)?;
        correct += top1_count(&logits, &labels);
        at = hi;
    }
    Ok(correct as f64 / data.n as f64)
}

/// Accuracy plus the sparsity/size summary used in reports.
pub fn evaluate(model: &mut TrainedModel, data: &Dataset, batch_size: usize) -> Result<EvalSummary> {
    let top1 = evaluate_accuracy(model, data, batch_size)?;
    let report = sparsity_report(&model.net, &model.latents)?;
    let est_coded_bytes = model.eval_rate_bits()? / 8.0;
    Ok(EvalSummary { top1, est_coded_bytes, report })
}

// ---------------------------------------------------------------------------
// the training loop

struct MainOptimizer {
    adam: AdamState<f32>,
    /// (kind, layer-or-group id) per registered tensor, for error messages.
    names: Vec<String>,
}

fn register_main_params(model: &TrainedModel, lr: f64) -> MainOptimizer {
    let mut sizes = Vec::new();
    let mut names = Vec::new();
    for (id, latent) in model.latents.iter().enumerate() {
        if let Some(latent) = latent {
            sizes.push(latent.surrogate.len());
            names.push(format!("latent[layer {id}]"));
        }
    }
    for (gi, group) in model.groups.iter().enumerate() {
        sizes.push(group.psi.len());
        names.push(format!("psi[group {gi} {}]", group.name));
    }
    for (id, layer) in model.net.layers.iter().enumerate() {
        match layer {
            Layer::Dense { bias, .. } => {
                sizes.push(bias.len());
                names.push(format!("bias[layer {id}]"));
            }
            Layer::BatchNorm(bn) => {
                sizes.push(bn.gamma.len());
                names.push(format!("bn_gamma[layer {id}]"));
                sizes.push(bn.beta.len());
                names.push(format!("bn_beta[layer {id}]"));
            }
            _ => {}
        }
    }
    MainOptimizer { adam: AdamState::new(lr, &sizes), names }
}

/// One main-optimizer step over latents, decoders, biases, and batchnorm
/// affine parameters, in registration order.
fn main_step(
    model: &mut TrainedModel,
    opt: &mut MainOptimizer,
    latent_grads: &[Option<Vec<f32>>],
    psi_grads: &[Vec<f32>],
    net_grads: &NetGrads<f32>,
) -> Result<()> {
    let mut params: Vec<&mut [f32]> = Vec::new();
    let mut grads: Vec<&[f32]> = Vec::new();
    for (latent, grad) in model.latents.iter_mut().zip(latent_grads) {
        if let Some(latent) = latent {
            params.push(&mut latent.surrogate);
            grads.push(grad.as_ref().expect("latent grad"));
        }
    }
    for (group, grad) in model.groups.iter_mut().zip(psi_grads) {
        params.push(&mut group.psi);
        grads.push(grad);
    }
    for (id, layer) in model.net.layers.iter_mut().enumerate() {
        match layer {
            Layer::Dense { bias, .. } => {
                params.push(bias);
                grads.push(net_grads.bias[id].as_ref().expect("bias grad"));
            }
            Layer::BatchNorm(bn) => {
                let (gg, gb) = net_grads.bn[id].as_ref().expect("bn grad");
                params.push(&mut bn.gamma);
                grads.push(gg);
                params.push(&mut bn.beta);
                grads.push(gb);
            }
            _ => {}
        }
    }
    let names = &opt.names;
    opt.adam.step(params.into_iter(), grads.into_iter(), |i| names[i].clone())
}

/// Train a model per the config, writing artifacts (config snapshot,
/// metrics.csv, state.bin, model.lnx, report.json) into `cfg.out_dir`.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;

    let data_dir = cfg.resolve_data_dir();
    let (train_data, test_data) = load_dataset(cfg.dataset, &data_dir)?;
    let augment = cfg.dataset == crate::config::DatasetKind::Cifar10Subset;

    let mut model = TrainedModel::init(cfg)?;
    let master = &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_1AB5);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut augment_rng = ChaCha8Rng::seed_from_u64(master.gen());

    let mut main_opt = register_main_params(&model, cfg.lr_main);
    let entropy_sizes: Vec<usize> =
        model.densities.iter().flat_map(|d| d.param_sizes()).collect();
    let mut entropy_opt: AdamState<f32> = AdamState::new(cfg.lr_entropy, &entropy_sizes);

    let batch_size = cfg.batch_size.min(train_data.n);
    let steps_per_epoch = (train_data.n / batch_size).max(1);
    let total_steps = (steps_per_epoch * cfg.epochs) as u64;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');

    let mut indices: Vec<usize> = (0..train_data.n).collect();
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_xent = 0.0f64;
        let mut epoch_rate = 0.0f64;
        let mut epoch_unstructured = 0.0f64;
        let mut epoch_group = 0.0f64;
        for step_in_epoch in 0..steps_per_epoch {
            let batch_idx =
                &indices[step_in_epoch * batch_size..(step_in_epoch + 1) * batch_size];
            let (batch, labels) = assemble_batch(
                &train_data,
                batch_idx,
                augment.then_some(&mut augment_rng),
            );

            // decode from rounded latents, forward, classification backward
            let weights = model.decode_weights()?;
            let (logits, cache) = model.net.forward(&weights, &batch, Mode::Train)?;
            let (xent, grad_logits) = xent_loss(&logits, &labels)?;
            let net_grads = model.net.backward(&weights, &cache, &grad_logits)?;

            // straight-through into surrogates and decoders
            let mut latent_grads: Vec<Option<Vec<f32>>> = vec![None; model.latents.len()];
            let mut psi_grads: Vec<Vec<f32>> =
                model.groups.iter().map(|g| vec![0.0; g.psi.len()]).collect();
            for (gi, group) in model.groups.iter().enumerate() {
                for &id in &group.members {
                    let latent = model.latents[id].as_ref().expect("latent");
                    let grad_w = net_grads.weight[id].as_ref().expect("weight grad");
                    let quantized = latent.quantized()?;
                    let (g_surr, g_psi) =
                        ste_backward(grad_w, &quantized, latent.rows, latent.l, &group.psi);
                    latent_grads[id] = Some(g_surr);
                    for (acc, g) in psi_grads[gi].iter_mut().zip(&g_psi) {
                        *acc += *g;
                    }
                }
            }

            // rate term: fresh uniform noise, λ_I-scaled into the latents;
            // the entropy model sees the unscaled likelihood gradient
            let lambda_i = cfg.lambda_i as f32;
            let mut density_grads: Vec<Vec<f32>> = Vec::new();
            for gi in 0..model.groups.len() {
                let members = model.group_latents(gi);
                let noise: Vec<Vec<f32>> = members
                    .iter()
                    .map(|m| {
                        (0..m.surrogate.len())
                            .map(|_| noise_rng.gen_range(-0.5..0.5f32))
                            .collect()
                    })
                    .collect();
                let (bits, grads) =
                    rate_loss(&members, &model.densities[gi], Some(&noise), true)?;
                epoch_rate += bits as f64;
                let grads = grads.expect("rate grads");
                for (mi, &id) in model.groups[gi].members.iter().enumerate() {
                    let dst = latent_grads[id].as_mut().expect("latent grad");
                    for (d, g) in dst.iter_mut().zip(&grads.latents[mi]) {
                        *d += lambda_i * *g;
                    }
                }
                density_grads.extend(grads.density);
            }

            // sparsity priors on the noiseless surrogates
            {
                let mut refs: Vec<&LatentTensor<f32>> = Vec::new();
                let mut ids: Vec<usize> = Vec::new();
                for group in &model.groups {
                    for &id in &group.members {
                        refs.push(model.latents[id].as_ref().expect("latent"));
                        ids.push(id);
                    }
                }
                let mut sp_grads: Vec<Vec<f32>> =
                    refs.iter().map(|r| vec![0.0; r.surrogate.len()]).collect();
                let mut cfg_u = cfg.sparsity;
                cfg_u.lambda_s = 0.0;
                let u_val = compute_loss(&refs, &cfg_u, &mut sp_grads);
                let mut cfg_s = cfg.sparsity;
                cfg_s.lambda_u = 0.0;
                let s_val = compute_loss(&refs, &cfg_s, &mut sp_grads);
                epoch_unstructured += u_val as f64;
                epoch_group += s_val as f64;
                for (i, &id) in ids.iter().enumerate() {
                    let dst = latent_grads[id].as_mut().expect("latent grad");
                    for (d, g) in dst.iter_mut().zip(&sp_grads[i]) {
                        *d += *g;
                    }
                }
            }

            epoch_xent += xent as f64;
            main_opt.adam.lr = cosine_lr(step, total_steps, cfg.lr_main) as f32;
            main_step(&mut model, &mut main_opt, &latent_grads, &psi_grads, &net_grads)
                .map_err(|e| {
                    Error::Training(format!(
                        "{e} at step {step}; last-good checkpoint retained in {}",
                        cfg.out_dir.display()
                    ))
                })?;
            let dg = density_grads.iter().map(|g| g.as_slice());
            let mut all_params: Vec<&mut [f32]> = Vec::new();
            for d in &mut model.densities {
                for p in d.params_mut() {
                    all_params.push(p.as_mut_slice());
                }
            }
            entropy_opt
                .step(all_params.into_iter(), dg, |i| format!("density param {i}"))
                .map_err(|e| {
                    Error::Training(format!(
                        "{e} at step {step}; last-good checkpoint retained in {}",
                        cfg.out_dir.display()
                    ))
                })?;
            step += 1;
        }

        let eval = evaluate(&mut model, &test_data, 256)?;
        let row = MetricsRow {
            epoch,
            xent: epoch_xent / steps_per_epoch as f64,
            rate_bits: epoch_rate / steps_per_epoch as f64,
            unstructured_loss: epoch_unstructured / steps_per_epoch as f64,
            group_loss: epoch_group / steps_per_epoch as f64,
            top1: eval.top1,
            est_coded_bytes: eval.est_coded_bytes,
            slice_sparsity: eval.report.global_slice_sparsity,
            unstructured_sparsity: eval.report.global_unstructured_sparsity,
            sflops_fraction: eval.report.sflops_fraction,
        };
        log::info!(
            "epoch {epoch}: xent {:.4} top1 {:.4} slice-sparsity {:.3} est-coded {:.0} B",
            row.xent,
            row.top1,
            row.slice_sparsity,
            row.est_coded_bytes
        );
        csv.push_str(&row.csv_line());
        csv.push('\n');
        metrics.push(row);
        std::fs::write(cfg.out_dir.join("metrics.csv"), &csv)?;
        save_state(&model, &cfg.out_dir.join("state.bin"))?;
        std::fs::write(cfg.out_dir.join("model.lnx"), model.to_lnx()?)?;
    }

    let lnx_bytes = model.to_lnx()?;
    std::fs::write(cfg.out_dir.join("model.lnx"), &lnx_bytes)?;
    let final_eval = evaluate(&mut model, &test_data, 256)?;
    let report_json = serde_json::json!({
        "accuracy": final_eval.top1,
        "est_coded_bytes": final_eval.est_coded_bytes,
        "sparsity": final_eval.report,
        "size": codec::report_size(&lnx_bytes)?,
    });
    std::fs::write(cfg.out_dir.join("report.json"), serde_json::to_string_pretty(&report_json)?)?;
    Ok(TrainOutcome { model, metrics, lnx_bytes, final_eval })
}

// ---------------------------------------------------------------------------
// full-precision training state on disk

const STATE_MAGIC: &[u8; 4] = b"LNXS";

/// Write the full-precision training state (surrogates, decoders, entropy
/// model parameters, raw network parameters).
pub fn save_state(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(STATE_MAGIC);
    w.u16(codec::VERSION);
    w.u8(model.arch.kind.id());
    w.u16(model.arch.input.0 as u16);
    w.u16(model.arch.input.1 as u16);
    w.u16(model.arch.input.2 as u16);
    w.u16(model.arch.num_classes as u16);
    w.u8(model.arch.widths.len() as u8);
    for &width in &model.arch.widths {
        w.u16(width as u16);
    }
    w.u8(model.groups.len() as u8);
    for (gi, group) in model.groups.iter().enumerate() {
        w.u8(group.name.len() as u8);
        w.bytes(group.name.as_bytes());
        w.u16(group.l as u16);
        w.u16(group.members.len() as u16);
        for &m in &group.members {
            w.u16(m as u16);
        }
        w.f32s(&group.psi);
        let dparams = model.densities[gi].params();
        w.u16(dparams.len() as u16);
        for p in dparams {
            w.u32(p.len() as u32);
            w.f32s(p);
        }
        for &id in &group.members {
            let latent = model.latents[id].as_ref().expect("latent");
            w.u16(id as u16);
            w.u32(latent.rows as u32);
            w.f32s(&latent.surrogate);
        }
    }
    for layer in &model.net.layers {
        match layer {
            Layer::Dense { bias, .. } => w.f32s(bias),
            Layer::BatchNorm(bn) => {
                w.f32s(&bn.gamma);
                w.f32s(&bn.beta);
                w.f32s(&bn.running_mean);
                w.f32s(&bn.running_var);
            }
            _ => {}
        }
    }
    std::fs::write(path, w.buf)?;
    Ok(())
}

/// Read back a state written by [`save_state`].
pub fn load_state(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    if r.bytes(4)? != STATE_MAGIC {
        return Err(Error::Codec("bad training-state magic".into()));
    }
    if r.u16()? != codec::VERSION {
        return Err(Error::Codec("unsupported training-state version".into()));
    }
    let kind = crate::arch::ArchKind::from_id(r.u8()?)?;
    let input = (r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
    let num_classes = r.u16()? as usize;
    let n_widths = r.u8()? as usize;
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(r.u16()? as usize);
    }
    let arch = ArchDescriptor { kind, input, num_classes, widths };
    let mut net: Network<f32> = arch.build()?;

    let n_groups = r.u8()? as usize;
    let mut groups = Vec::with_capacity(n_groups);
    let mut densities = Vec::with_capacity(n_groups);
    let mut latents: Vec<Option<LatentTensor<f32>>> = vec![None; net.layers.len()];
    let mut seed_rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..n_groups {
        let name_len = r.u8()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?.to_vec())
            .map_err(|_| Error::Codec("group name is not utf-8".into()))?;
        let l = r.u16()? as usize;
        let n_members = r.u16()? as usize;
        let mut members = Vec::with_capacity(n_members);
        for _ in 0..n_members {
            members.push(r.u16()? as usize);
        }
        let psi = r.f32s(l * l)?;
        let n_dparams = r.u16()? as usize;
        let mut dparams = Vec::with_capacity(n_dparams);
        for _ in 0..n_dparams {
            let len = r.u32()? as usize;
            dparams.push(r.f32s(len)?);
        }
        let mut density = FactorizedDensity::new(l, &mut seed_rng);
        density.set_params(dparams)?;
        densities.push(density);
        for _ in 0..n_members {
            let id = r.u16()? as usize;
            let rows = r.u32()? as usize;
            let shape = net
                .layers
                .get(id)
                .and_then(layer_weight_shape)
                .ok_or_else(|| Error::Codec(format!("layer {id} is not compressible")))?;
            if shape.rows() != rows || shape.slice_len() != l {
                return Err(Error::Codec(format!("layer {id}: stored latent shape mismatch")));
            }
            let surrogate = r.f32s(rows * l)?;
            latents[id] = Some(LatentTensor::new(shape, surrogate));
        }
        groups.push(ParameterGroup { name, members, l, psi });
    }
    for layer in net.layers.iter_mut() {
        match layer {
            Layer::Dense { bias, .. } => {
                let n = bias.len();
                *bias = r.f32s(n)?;
            }
            Layer::BatchNorm(bn) => {
                bn.gamma = r.f32s(bn.c)?;
                bn.beta = r.f32s(bn.c)?;
                bn.running_mean = r.f32s(bn.c)?;
                bn.running_var = r.f32s(bn.c)?;
            }
            _ => {}
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Codec(format!("{} trailing bytes in state", r.remaining())));
    }
    Ok(TrainedModel { arch, net, groups, latents, densities })
}
