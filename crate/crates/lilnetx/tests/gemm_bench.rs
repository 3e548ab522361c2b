use lilnetx::scalar::gemm_nn;
use std::time::Instant;

#[test]
fn gemm_throughput() {
    for (m, k, n, reps) in [(32usize, 144usize, 196usize, 20000usize), (48, 432, 49, 40000), (128, 256, 196, 5000)] {
        let a = vec![0.5f32; m * k];
        let b = vec![0.25f32; k * n];
        let mut c = vec![0.0f32; m * n];
        let t = Instant::now();
        for _ in 0..reps {
            gemm_nn(m, k, n, &a, &b, 0.0, &mut c);
        }
        let dt = t.elapsed().as_secs_f64();
        let flops = 2.0 * (m * k * n * reps) as f64;
        println!("{}x{}x{}: {:.2} GFLOP/s", m, k, n, flops / dt / 1e9);
    }
}
