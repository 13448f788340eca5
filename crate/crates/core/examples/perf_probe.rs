use std::time::Instant;

fn main() {
    // erf throughput
    let t0 = Instant::now();
    let mut acc = 0.0f64;
    let n = 10_000_000u64;
    for i in 0..n {
        acc += libm::erf(i as f64 * 1e-7 - 0.5);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("erf: {:.1} ns/call (acc {acc:.3})", dt * 1e9 / n as f64);

    // exp throughput
    let t0 = Instant::now();
    let mut acc = 0.0f64;
    for i in 0..n {
        acc += (-((i % 1000) as f64) * 1e-3).exp();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("exp: {:.1} ns/call (acc {acc:.3})", dt * 1e9 / n as f64);

    // gelu (erf + mul)
    let t0 = Instant::now();
    let mut acc = 0.0f64;
    for i in 0..n {
        acc += stlinear::gelu(i as f64 * 1e-7 - 0.5);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("gelu: {:.1} ns/call (acc {acc:.3})", dt * 1e9 / n as f64);

    // dot(160) throughput through the crate's affine path
    let w = stlinear::Tensor::from_vec(&[160, 160], (0..160 * 160).map(|i| (i as f64).sin()).collect()).unwrap();
    let b = vec![0.1; 160];
    let x: Vec<f64> = (0..160).map(|i| (i as f64).cos()).collect();
    let iters = 20_000u64;
    let t0 = Instant::now();
    let mut sink = 0.0;
    for _ in 0..iters {
        let y = stlinear::affine_forward(&w, &b, &x).unwrap();
        sink += y[0];
    }
    let dt = t0.elapsed().as_secs_f64();
    let macs = iters as f64 * 160.0 * 160.0;
    println!("affine 160x160: {:.2} G MAC/s (sink {sink:.3})", macs / dt / 1e9);
}
