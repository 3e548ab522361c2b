//! Arithmetic coding of quantized latents and the `.lnx` compressed model
//! container.
//!
//! Container layout (all integers little-endian):
//!   magic "LNX1", version u16, architecture descriptor,
//!   section lengths (groups, tensors, raw),
//!   groups section: per group the decoder Ψ and per-dimension PMF tables,
//!   tensors section: per compressible layer a length-prefixed range-coded
//!   payload followed by its CRC32,
//!   raw section: biases and batchnorm parameters as plain f32.

pub mod range;

use crate::arch::ArchDescriptor;
use crate::entropy::{DimPmf, PmfTable};
use crate::layers::Layer;
use crate::net::Network;
use crate::reparam::{LatentTensor, ParameterGroup};
use crate::{Error, Result};
use range::{CumTable, RangeDecoder, RangeEncoder, TOTAL};

pub const MAGIC: &[u8; 4] = b"LNX1";
pub const VERSION: u16 = 1;

/// Everything the container persists: the skeleton with its uncompressed
/// parameters, per-group decoders and frequency tables, and the quantized
/// latents per compressible layer.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub arch: ArchDescriptor,
    pub net: Network<f32>,
    pub groups: Vec<ParameterGroup<f32>>,
    /// Integer-valued latents by layer id (None for non-compressible layers).
    pub latents: Vec<Option<LatentTensor<f32>>>,
    /// Frozen frequency tables, one per group.
    pub tables: Vec<PmfTable>,
}

/// Size accounting for a serialized model, in bytes.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SizeReport {
    pub total: usize,
    pub coded_latents: usize,
    pub pmf_tables: usize,
    pub decoders_psi: usize,
    pub raw_params: usize,
    pub header: usize,
    /// 4 bytes per parameter of the dense float network.
    pub dense_baseline: usize,
    pub compression_ratio: f64,
}

// ---------------------------------------------------------------------------
// byte-level helpers

pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self { buf: Vec::new() }
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    pub fn f32s(&mut self, vs: &[f32]) {
        for &v in vs {
            self.f32(v);
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Codec(format!(
                "truncated file: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }
    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    pub fn position(&self) -> usize {
        self.pos
    }
    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

// ---------------------------------------------------------------------------
// tensor coding

fn cum_tables(table: &PmfTable) -> Vec<CumTable> {
    table.dims.iter().map(|d| CumTable::new(&d.freqs)).collect()
}

/// Range-code one tensor's integer symbols with the group's tables. Symbols
/// outside a dimension's support escape through the tail symbol followed by
/// 32 raw bits. An empty tensor produces an empty payload.
pub fn encode_tensor(symbols: &[i32], table: &PmfTable, l: usize) -> Result<Vec<u8>> {
    if table.dims.len() != l {
        return Err(Error::Codec(format!(
            "table has {} dimensions, tensor rows have {l}",
            table.dims.len()
        )));
    }
    if symbols.len() % l != 0 {
        return Err(Error::Codec(format!(
            "{} symbols do not fill rows of length {l}",
            symbols.len()
        )));
    }
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    let cums = cum_tables(table);
    let mut enc = RangeEncoder::new();
    for (idx, &value) in symbols.iter().enumerate() {
        let dim = idx % l;
        let pmf = &table.dims[dim];
        let sym = pmf.symbol_index(value);
        let (cum, freq) = cums[dim].span(sym);
        enc.encode(cum, freq);
        if sym == pmf.tail_index() {
            let u = value as u32;
            enc.encode_raw_u16((u >> 16) as u16);
            enc.encode_raw_u16(u as u16);
        }
    }
    Ok(enc.finish())
}

/// Exact inverse of [`encode_tensor`] for `rows` rows of length `l`.
pub fn decode_tensor(payload: &[u8], table: &PmfTable, rows: usize, l: usize) -> Result<Vec<i32>> {
    if table.dims.len() != l {
        return Err(Error::Codec(format!(
            "table has {} dimensions, tensor rows have {l}",
            table.dims.len()
        )));
    }
    let n = rows * l;
    if n == 0 {
        return Ok(Vec::new());
    }
    let cums = cum_tables(table);
    let mut dec = RangeDecoder::new(payload);
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let dim = idx % l;
        let pmf = &table.dims[dim];
        let sym = cums[dim].lookup(dec.peek_cum());
        let (cum, freq) = cums[dim].span(sym);
        dec.consume(cum, freq);
        if sym == pmf.tail_index() {
            let hi = dec.decode_raw_u16() as u32;
            let lo = dec.decode_raw_u16() as u32;
            out.push(((hi << 16) | lo) as i32);
        } else {
            out.push(pmf.s_min + sym as i32);
        }
    }
    Ok(out)
}

/// Ideal coded size in bits of `symbols` under the table: Σ −log₂(freq/2¹⁶),
/// with escapes costing their tail symbol plus 32 raw bits.
pub fn ideal_bits(symbols: &[i32], table: &PmfTable, l: usize) -> f64 {
    let mut bits = 0.0;
    for (idx, &value) in symbols.iter().enumerate() {
        let pmf = &table.dims[idx % l];
        let sym = pmf.symbol_index(value);
        bits -= ((pmf.freqs[sym] as f64) / TOTAL as f64).log2();
        if sym == pmf.tail_index() {
            bits += 32.0;
        }
    }
    bits
}

// ---------------------------------------------------------------------------
// container

fn write_arch(w: &mut Writer, arch: &ArchDescriptor) {
    w.u8(arch.kind.id());
    w.u16(arch.input.0 as u16);
    w.u16(arch.input.1 as u16);
    w.u16(arch.input.2 as u16);
    w.u16(arch.num_classes as u16);
    w.u8(arch.widths.len() as u8);
    for &width in &arch.widths {
        w.u16(width as u16);
    }
}

fn read_arch(r: &mut Reader) -> Result<ArchDescriptor> {
    let kind = crate::arch::ArchKind::from_id(r.u8()?)?;
    let input = (r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
    let num_classes = r.u16()? as usize;
    let n_widths = r.u8()? as usize;
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(r.u16()? as usize);
    }
    Ok(ArchDescriptor { kind, input, num_classes, widths })
}

fn write_groups(w: &mut Writer, groups: &[ParameterGroup<f32>], tables: &[PmfTable]) {
    w.u8(groups.len() as u8);
    for (group, table) in groups.iter().zip(tables) {
        w.u8(group.name.len() as u8);
        w.bytes(group.name.as_bytes());
        w.u16(group.l as u16);
        w.u16(group.members.len() as u16);
        for &m in &group.members {
            w.u16(m as u16);
        }
        w.f32s(&group.psi);
        for dim in &table.dims {
            w.i32(dim.s_min);
            w.i32(dim.s_max);
            w.u16(dim.freqs.len() as u16);
            for &f in &dim.freqs {
                w.u16(f);
            }
        }
    }
}

fn read_groups(r: &mut Reader) -> Result<(Vec<ParameterGroup<f32>>, Vec<PmfTable>)> {
    let count = r.u8()? as usize;
    let mut groups = Vec::with_capacity(count);
    let mut tables = Vec::with_capacity(count);
    for _ in 0..count {
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
        let mut dims = Vec::with_capacity(l);
        for _ in 0..l {
            let s_min = r.i32()?;
            let s_max = r.i32()?;
            let n_freq = r.u16()? as usize;
            let mut freqs = Vec::with_capacity(n_freq);
            for _ in 0..n_freq {
                freqs.push(r.u16()?);
            }
            let sum: u32 = freqs.iter().map(|&f| f as u32).sum();
            if sum != TOTAL {
                return Err(Error::Codec(format!(
                    "frequency table sums to {sum}, expected {TOTAL}"
                )));
            }
            if n_freq != (s_max - s_min + 1) as usize + 1 {
                return Err(Error::Codec("frequency table does not match its support".into()));
            }
            dims.push(DimPmf { s_min, s_max, freqs });
        }
        groups.push(ParameterGroup { name, members, l, psi });
        tables.push(PmfTable { dims });
    }
    Ok((groups, tables))
}

/// Raw (uncompressed) parameter streams of a network, in layer order.
fn raw_params(net: &Network<f32>) -> Vec<(u8, usize, Vec<f32>)> {
    let mut items = Vec::new();
    for (id, layer) in net.layers.iter().enumerate() {
        match layer {
            Layer::Dense { bias, .. } => items.push((0u8, id, bias.clone())),
            Layer::BatchNorm(bn) => {
                items.push((1, id, bn.gamma.clone()));
                items.push((2, id, bn.beta.clone()));
                items.push((3, id, bn.running_mean.clone()));
                items.push((4, id, bn.running_var.clone()));
            }
            _ => {}
        }
    }
    items
}

fn apply_raw_param(net: &mut Network<f32>, kind: u8, id: usize, data: Vec<f32>) -> Result<()> {
    let err = || Error::Codec(format!("raw parameter kind {kind} does not fit layer {id}"));
    match (kind, net.layers.get_mut(id)) {
        (0, Some(Layer::Dense { bias, .. })) if bias.len() == data.len() => *bias = data,
        (1, Some(Layer::BatchNorm(bn))) if bn.c == data.len() => bn.gamma = data,
        (2, Some(Layer::BatchNorm(bn))) if bn.c == data.len() => bn.beta = data,
        (3, Some(Layer::BatchNorm(bn))) if bn.c == data.len() => bn.running_mean = data,
        (4, Some(Layer::BatchNorm(bn))) if bn.c == data.len() => bn.running_var = data,
        _ => return Err(err()),
    }
    Ok(())
}

/// Serialize a trained model into `.lnx` bytes. Deterministic: the same
/// state always produces identical bytes.
pub fn serialize_model(state: &ModelState) -> Result<Vec<u8>> {
    if state.groups.len() != state.tables.len() {
        return Err(Error::Codec("one PMF table per group required".into()));
    }
    let mut groups_w = Writer::new();
    write_groups(&mut groups_w, &state.groups, &state.tables);

    let mut tensors_w = Writer::new();
    let mut tensor_entries = Vec::new();
    for (gi, group) in state.groups.iter().enumerate() {
        for &layer_id in &group.members {
            let latent = state.latents[layer_id].as_ref().ok_or_else(|| {
                Error::Codec(format!("group member layer {layer_id} has no latent tensor"))
            })?;
            tensor_entries.push((layer_id, gi, latent));
        }
    }
    tensor_entries.sort_by_key(|(id, _, _)| *id);
    tensors_w.u16(tensor_entries.len() as u16);
    for (layer_id, gi, latent) in tensor_entries {
        let symbols = latent.quantized_i32()?;
        let payload = encode_tensor(&symbols, &state.tables[gi], latent.l)?;
        tensors_w.u16(layer_id as u16);
        tensors_w.u8(gi as u8);
        tensors_w.u32(latent.rows as u32);
        tensors_w.u32(payload.len() as u32);
        tensors_w.bytes(&payload);
        tensors_w.u32(crc32fast::hash(&payload));
    }

    let mut raw_w = Writer::new();
    let items = raw_params(&state.net);
    raw_w.u16(items.len() as u16);
    for (kind, id, data) in items {
        raw_w.u8(kind);
        raw_w.u16(id as u16);
        raw_w.u32(data.len() as u32);
        raw_w.f32s(&data);
    }

    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    write_arch(&mut w, &state.arch);
    w.u32(groups_w.buf.len() as u32);
    w.u32(tensors_w.buf.len() as u32);
    w.u32(raw_w.buf.len() as u32);
    w.bytes(&groups_w.buf);
    w.bytes(&tensors_w.buf);
    w.bytes(&raw_w.buf);
    Ok(w.buf)
}

/// Parse and verify `.lnx` bytes back into a model state. Every latent,
/// decoder, bias, and batchnorm value round-trips bit-exactly.
pub fn deserialize_model(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader::new(bytes);
    let magic = r.bytes(4)?;
    if magic != MAGIC {
        return Err(Error::Codec(format!("bad magic {magic:02x?}")));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Codec(format!("unsupported version {version}")));
    }
    let arch = read_arch(&mut r)?;
    let groups_len = r.u32()? as usize;
    let tensors_len = r.u32()? as usize;
    let raw_len = r.u32()? as usize;
    let declared = r.position() + groups_len + tensors_len + raw_len;
    if declared != bytes.len() {
        return Err(Error::Codec(format!(
            "file length {} does not match declared {declared}",
            bytes.len()
        )));
    }

    let mut net: Network<f32> = arch.build()?;

    let groups_start = r.position();
    let (groups, tables) = read_groups(&mut r)?;
    if r.position() - groups_start != groups_len {
        return Err(Error::Codec("groups section length mismatch".into()));
    }

    let n_tensors = r.u16()? as usize;
    let mut latents: Vec<Option<LatentTensor<f32>>> = vec![None; net.layers.len()];
    for _ in 0..n_tensors {
        let layer_id = r.u16()? as usize;
        let gi = r.u8()? as usize;
        let rows = r.u32()? as usize;
        let payload_len = r.u32()? as usize;
        let payload = r.bytes(payload_len)?;
        let crc = r.u32()?;
        if crc32fast::hash(payload) != crc {
            return Err(Error::Codec(format!("checksum failure on layer {layer_id} payload")));
        }
        let group = groups
            .get(gi)
            .ok_or_else(|| Error::Codec(format!("tensor references missing group {gi}")))?;
        let shape = net
            .layers
            .get(layer_id)
            .and_then(crate::reparam::layer_weight_shape)
            .ok_or_else(|| Error::Codec(format!("layer {layer_id} is not compressible")))?;
        if shape.rows() != rows || shape.slice_len() != group.l {
            return Err(Error::Codec(format!(
                "layer {layer_id}: stored {rows}x{} does not match architecture",
                group.l
            )));
        }
        let symbols = decode_tensor(payload, &tables[gi], rows, group.l)?;
        let surrogate: Vec<f32> = symbols.iter().map(|&s| s as f32).collect();
        latents[layer_id] = Some(LatentTensor::new(shape, surrogate));
    }
    for group in &groups {
        for &m in &group.members {
            if latents.get(m).map_or(true, Option::is_none) {
                return Err(Error::Codec(format!("missing tensor for group member layer {m}")));
            }
        }
    }

    let n_raw = r.u16()? as usize;
    for _ in 0..n_raw {
        let kind = r.u8()?;
        let id = r.u16()? as usize;
        let count = r.u32()? as usize;
        let data = r.f32s(count)?;
        apply_raw_param(&mut net, kind, id, data)?;
    }
    if r.remaining() != 0 {
        return Err(Error::Codec(format!("{} trailing bytes", r.remaining())));
    }

    Ok(ModelState { arch, net, groups, latents, tables })
}

/// Measure the on-disk component sizes of a serialized model.
pub fn report_size(bytes: &[u8]) -> Result<SizeReport> {
    let state = deserialize_model(bytes)?;
    let mut r = Reader::new(bytes);
    r.bytes(4)?;
    r.u16()?;
    read_arch(&mut r)?;
    let _groups_len = r.u32()? as usize;
    let tensors_len = r.u32()? as usize;
    let _raw_len = r.u32()? as usize;

    let decoders_psi: usize = state.groups.iter().map(|g| 4 * g.l * g.l).sum();
    let pmf_tables: usize = state
        .tables
        .iter()
        .flat_map(|t| t.dims.iter())
        .map(|d| 4 + 4 + 2 + 2 * d.freqs.len())
        .sum();
    // payloads plus their checksums count as coded content
    let mut coded_latents = 0usize;
    {
        let mut tr = Reader::new(bytes);
        tr.bytes(4)?;
        tr.u16()?;
        read_arch(&mut tr)?;
        let groups_len = tr.u32()? as usize;
        tr.u32()?;
        tr.u32()?;
        tr.bytes(groups_len)?;
        let n_tensors = tr.u16()? as usize;
        for _ in 0..n_tensors {
            tr.u16()?;
            tr.u8()?;
            tr.u32()?;
            let payload_len = tr.u32()? as usize;
            tr.bytes(payload_len)?;
            tr.u32()?;
            coded_latents += payload_len + 4;
        }
        let _ = tensors_len;
    }
    let raw_params: usize = raw_params(&state.net).iter().map(|(_, _, d)| 4 * d.len()).sum();
    let total = bytes.len();
    let header = total - coded_latents - pmf_tables - decoders_psi - raw_params;
    let dense_baseline = 4 * ArchDescriptor::dense_param_count(&state.net);
    Ok(SizeReport {
        total,
        coded_latents,
        pmf_tables,
        decoders_psi,
        raw_params,
        header,
        dense_baseline,
        compression_ratio: dense_baseline as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::quantize_pmf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table_for(probs_per_dim: &[Vec<f64>], supports: &[(i32, i32)]) -> PmfTable {
        let dims = probs_per_dim
            .iter()
            .zip(supports)
            .map(|(probs, &(s_min, s_max))| {
                let freqs = quantize_pmf(probs, TOTAL);
                DimPmf {
                    s_min,
                    s_max,
                    freqs: freqs.into_iter().map(|f| f as u16).collect(),
                }
            })
            .collect();
        PmfTable { dims }
    }

    #[test]
    fn uniform_eight_symbol_table_costs_three_bits() {
        let probs = vec![vec![0.125; 8], vec![]];
        let table = table_for(&probs[..1], &[(0, 6)]); // 7 support + tail = 8 symbols
        let symbols = vec![3i32; 10];
        let bits = ideal_bits(&symbols, &table, 1);
        assert!((bits - 30.0).abs() < 1e-9, "got {bits}");
    }

    #[test]
    fn empty_tensor_empty_payload() {
        let table = table_for(&[vec![0.5, 0.5]], &[(0, 0)]);
        let payload = encode_tensor(&[], &table, 1).unwrap();
        assert!(payload.is_empty());
        let decoded = decode_tensor(&payload, &table, 0, 1).unwrap();
        assert!(decoded.is_empty());
    }

    #[test]
    fn all_zero_tensor_payload_grows_sublinearly() {
        // near-certain zero symbol
        let table = table_for(&[vec![0.0001, 0.9997, 0.0001, 0.0001]], &[(-1, 1)]);
        let small = encode_tensor(&vec![0i32; 100], &table, 1).unwrap();
        let large = encode_tensor(&vec![0i32; 10_000], &table, 1).unwrap();
        assert!(small.len() <= 4, "{} bytes at n=100", small.len());
        assert!(large.len() <= 12, "{} bytes at n=10000", large.len());
    }

    #[test]
    fn out_of_support_values_escape_losslessly() {
        let table = table_for(&[vec![0.3, 0.3, 0.3, 0.1]], &[(-1, 1)]);
        let symbols = vec![0, 1, -1, 700_000, 0, i32::MIN, i32::MAX, -1];
        let payload = encode_tensor(&symbols, &table, 1).unwrap();
        let decoded = decode_tensor(&payload, &table, symbols.len(), 1).unwrap();
        assert_eq!(decoded, symbols);
    }

    #[test]
    fn fuzz_roundtrip_and_size_fidelity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..300 {
            let l = *[1usize, 4, 9].iter().nth(case % 3).unwrap();
            let mut probs_per_dim = Vec::new();
            let mut supports = Vec::new();
            for _ in 0..l {
                let s_min = rng.gen_range(-6..0);
                let s_max = rng.gen_range(0..6);
                let n = (s_max - s_min + 1) as usize + 1;
                let mut probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.001..1.0)).collect();
                let total: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= total);
                probs_per_dim.push(probs);
                supports.push((s_min, s_max));
            }
            let table = table_for(&probs_per_dim, &supports);
            let rows = rng.gen_range(0..200usize);
            let symbols: Vec<i32> = (0..rows * l)
                .map(|_| {
                    if rng.gen_bool(0.02) {
                        rng.gen_range(-100_000..100_000)
                    } else {
                        rng.gen_range(-7..7)
                    }
                })
                .collect();
            let payload = encode_tensor(&symbols, &table, l).unwrap();
            let decoded = decode_tensor(&payload, &table, rows, l).unwrap();
            assert_eq!(decoded, symbols, "case {case}");
            let ideal = ideal_bits(&symbols, &table, l);
            assert!(
                payload.len() as f64 * 8.0 <= ideal + 64.0,
                "case {case}: {} bytes vs ideal {ideal:.1} bits",
                payload.len()
            );
        }
    }
}
