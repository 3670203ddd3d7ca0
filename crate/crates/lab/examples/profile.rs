// Scratch profiler: where does a training step spend its time?
use contrario_lab::nets::{build_discriminator, build_generator, patch_discriminator_spec, Fusion, Task};
use contrario_lab::nn::{Conv2d, FwdCtx, Mode, Module};
use contrario_lab::rng::stream;
use ndarray::Array4;
use rand::Rng;
use std::time::Instant;

fn timeit(label: &str, mut f: impl FnMut()) {
    let n = 5;
    let t0 = Instant::now();
    for _ in 0..n {
        f();
    }
    println!("{label}: {:.1} ms", 1000.0 * t0.elapsed().as_secs_f64() / n as f64);
}

fn main() {
    let mut r = stream(0, "profile");
    let task = Task::Label2Image { n_classes: 5 };
    let mut g = build_generator(task, 64, 8, &mut r).unwrap();
    let mut d = build_discriminator(5, 3, &patch_discriminator_spec(8), Fusion::EarlyConcat, &mut r).unwrap();
    let x = Array4::from_shape_simple_fn((16, 5, 64, 64), || r.gen_range(-1.0f32..1.0));
    let y = Array4::from_shape_simple_fn((16, 3, 64, 64), || r.gen_range(-1.0f32..1.0));

    let mut grng = stream(1, "g");
    timeit("G fwd (train)", || {
        let _ = g.forward(&x, &mut FwdCtx::train(&mut grng)).unwrap();
    });
    let (yg, gc) = g.forward(&x, &mut FwdCtx::train(&mut grng)).unwrap();
    timeit("G bwd", || {
        g.zero_grads();
        g.backward(&gc, &yg).unwrap();
    });
    timeit("D fwd (train)", || {
        let mut ctx = FwdCtx { mode: Mode::Train, rng: None };
        let _ = d.forward(&x, &y, &mut ctx).unwrap();
    });
    let mut ctx = FwdCtx { mode: Mode::Train, rng: None };
    let (resp, dc) = d.forward(&x, &y, &mut ctx).unwrap();
    timeit("D bwd (params only)", || {
        d.zero_grads();
        let _ = d.backward(&dc, &resp.raw, false).unwrap();
    });
    timeit("D bwd (with dx)", || {
        d.zero_grads();
        let _ = d.backward(&dc, &resp.raw, true).unwrap();
    });

    // isolate one conv layer cost: G head-ish conv at 64x64
    let conv = Conv2d::new(16, 3, 3, 1, 1, true, &mut r);
    let big = Array4::from_shape_simple_fn((16, 16, 64, 64), || r.gen_range(-1.0f32..1.0));
    timeit("conv 16->3 k3 @64 fwd", || {
        let _ = conv.forward(&big).unwrap();
    });
    let conv2 = Conv2d::new(5, 8, 4, 2, 1, true, &mut r);
    timeit("conv 5->8 k4s2 @64 fwd", || {
        let _ = conv2.forward(&x).unwrap();
    });
    let mut conv3 = Conv2d::new(16, 32, 4, 2, 1, false, &mut r);
    let mid = Array4::from_shape_simple_fn((16, 16, 16, 16), || r.gen_range(-1.0f32..1.0));
    let (o3, c3) = conv3.forward(&mid).unwrap();
    timeit("conv 16->32 k4s2 @16 fwd+bwd", || {
        let _ = conv3.forward(&mid).unwrap();
        conv3.gw.fill(0.0);
        let _ = conv3.backward(&c3, &o3, true).unwrap();
    });
}
