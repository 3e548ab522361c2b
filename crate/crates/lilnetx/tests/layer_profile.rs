use lilnetx::layers::*;
use lilnetx::tensor::Tensor4;
use std::time::Instant;

fn t_ms<F: FnMut()>(mut f: F, reps: usize) -> f64 {
    let t = Instant::now();
    for _ in 0..reps { f(); }
    t.elapsed().as_secs_f64() * 1e3 / reps as f64
}

#[test]
fn profile_layers() {
    let n = 128;
    for (ci, co, hw, stride) in [(1usize, 16usize, 28usize, 1usize), (16, 32, 28, 2), (32, 48, 14, 2), (48, 48, 7, 1)] {
        let spec = ConvSpec { c_in: ci, c_out: co, k: 3, stride, padding: 1 };
        let input = Tensor4::from_vec(n, ci, hw, hw, vec![0.5f32; n*ci*hw*hw]);
        let weight = vec![0.1f32; spec.weight_len()];
        let fwd = t_ms(|| { conv_forward(0, &spec, &weight, &input).unwrap(); }, 10);
        let (out, cache) = conv_forward(0, &spec, &weight, &input).unwrap();
        let bwd = t_ms(|| { conv_backward(&spec, &weight, &cache, &out); }, 10);
        let (ho, _) = spec.out_hw(hw, hw);
        let macs = (n*co*ho*ho*ci*9) as f64;
        println!("conv {ci}->{co} @{hw} s{stride}: fwd {fwd:.1} ms ({:.1} GF/s), bwd {bwd:.1} ms", 2.0*macs/fwd*1e-6);
        let mut bn = BatchNorm::<f32>::new(co);
        let bnf = t_ms(|| { batchnorm_forward(0, &mut bn, &out, true).unwrap(); }, 10);
        let (bo, bc) = batchnorm_forward(0, &mut bn, &out, true).unwrap();
        let bnb = t_ms(|| { batchnorm_backward(&bn, &bc, &bo); }, 10);
        let rf = t_ms(|| { relu_forward(&bo); }, 10);
        println!("   bn fwd {bnf:.2} ms bwd {bnb:.2} ms, relu fwd {rf:.2} ms");
    }
}
