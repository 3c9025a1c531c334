use mace::dualconv::{dualistic_conv, dualistic_conv_grad, valley_conv, valley_conv_grad, ConvKernel, PadMode};

fn fd_check(name: &str, x: &[f64], k: &ConvKernel, pad: PadMode, up: &[f64], valley: bool) {
    let f = |xs: &[f64], kk: &ConvKernel| -> f64 {
        let out = if valley {
            valley_conv(xs, kk, pad).unwrap()
        } else {
            dualistic_conv(xs, kk, pad).unwrap()
        };
        out.iter().zip(up).map(|(o, u)| o * u).sum()
    };
    let (gx, ga) = if valley {
        valley_conv_grad(x, k, pad, up).unwrap()
    } else {
        dualistic_conv_grad(x, k, pad, up).unwrap()
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let fd = (f(&xp, k) - f(&xm, k)) / (2.0 * h);
        let rel = (gx[i] - fd).abs() / gx[i].abs().max(fd.abs()).max(1e-9);
        if rel > worst { worst = rel; }
        if rel > 1e-4 { println!("  {name} gx[{i}]: analytic {:.8} fd {fd:.8}", gx[i]); }
    }
    for i in 0..k.len() {
        let mut kp = k.clone();
        let mut km = k.clone();
        kp.weights[i] += h;
        km.weights[i] -= h;
        let fd = (f(x, &kp) - f(x, &km)) / (2.0 * h);
        let rel = (ga[i] - fd).abs() / ga[i].abs().max(fd.abs()).max(1e-9);
        if rel > worst { worst = rel; }
        if rel > 1e-4 { println!("  {name} ga[{i}]: analytic {:.8} fd {fd:.8}", ga[i]); }
    }
    println!("{name}: worst rel {worst:.3e}");
}

fn main() {
    let x = [1.9, -0.8, 0.37, 0.09];
    let up = [0.7, -0.4];
    let peak = ConvKernel::new(vec![0.9, 0.5, 0.7], 7, 5.0, 3).unwrap();
    fd_check("peak zero-tail", &x, &peak, PadMode::ZeroTail, &up, false);

    let xv = [1.9, 0.8, 0.37, 0.09];
    let valley = ConvKernel::new(vec![0.9, 0.5, 0.7], -7, 5.0, 3).unwrap();
    fd_check("valley mean-tail", &xv, &valley, PadMode::MeanTail, &up, true);

    let nopad = ConvKernel::new(vec![0.9, 0.5, 0.7], 7, 5.0, 3).unwrap();
    fd_check("peak no-pad len6", &[1.9, -0.8, 0.37, 0.09, 0.5, 0.21], &nopad, PadMode::None, &up, false);
}
