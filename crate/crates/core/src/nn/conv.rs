//! 3×3, stride 1, zero-padded convolution on channel-last (`H×W×C`) buffers.
//! Weights are laid out `[ky][kx][cin][cout]`; every inner loop is an axpy over a
//! contiguous channel run so it vectorises without reassociating sums.

#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub cin: usize,
    pub cout: usize,
}

#[inline]
fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Pre-activation output at one pixel, written to `out` (`cout` values).
#[inline]
pub fn forward_pixel(input: &[f64], weight: &[f64], bias: &[f64], s: Shape, y: usize, x: usize, out: &mut [f64]) {
    out.copy_from_slice(bias);
    for ky in 0..3 {
        let Some(iy) = (y + ky).checked_sub(1).filter(|&iy| iy < s.height) else { continue };
        for kx in 0..3 {
            let Some(ix) = (x + kx).checked_sub(1).filter(|&ix| ix < s.width) else { continue };
            let inp = &input[(iy * s.width + ix) * s.cin..][..s.cin];
            let wtap = &weight[(ky * 3 + kx) * s.cin * s.cout..][..s.cin * s.cout];
            for (ci, &xv) in inp.iter().enumerate() {
                if xv != 0.0 {
                    axpy(out, xv, &wtap[ci * s.cout..][..s.cout]);
                }
            }
        }
    }
}

/// Dense pre-activation output for every pixel.
pub fn forward(input: &[f64], weight: &[f64], bias: &[f64], s: Shape) -> Vec<f64> {
    let mut out = vec![0.0; s.height * s.width * s.cout];
    for y in 0..s.height {
        for x in 0..s.width {
            let o = (y * s.width + x) * s.cout;
            forward_pixel(input, weight, bias, s, y, x, &mut out[o..o + s.cout]);
        }
    }
    out
}

#[inline]
pub fn relu_in_place(x: &mut [f64]) {
    for v in x.iter_mut() {
        if !(*v > 0.0) {
            *v = 0.0;
        }
    }
}

/// `[ky][kx][cout][cin]` copy of the weights for the input-gradient pass.
fn transpose_weights(weight: &[f64], s: Shape) -> Vec<f64> {
    let mut t = vec![0.0; weight.len()];
    for tap in 0..9 {
        for ci in 0..s.cin {
            for co in 0..s.cout {
                t[(tap * s.cout + co) * s.cin + ci] = weight[(tap * s.cin + ci) * s.cout + co];
            }
        }
    }
    t
}

/// Accumulates gradients for the output pixels listed in `pixels` (flat `y * width + x`
/// indices) whose output gradient rows are `d_out[k * cout..]`. `d_input` is skipped when
/// `None` (first layer).
pub fn backward_at(
    input: &[f64],
    weight: &[f64],
    s: Shape,
    pixels: &[usize],
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let wt = d_input.as_ref().map(|_| transpose_weights(weight, s));
    for (k, &p) in pixels.iter().enumerate() {
        let g = &d_out[k * s.cout..][..s.cout];
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (db, &gv) in d_bias.iter_mut().zip(g) {
            *db += gv;
        }
        let (y, x) = (p / s.width, p % s.width);
        for ky in 0..3 {
            let Some(iy) = (y + ky).checked_sub(1).filter(|&iy| iy < s.height) else { continue };
            for kx in 0..3 {
                let Some(ix) = (x + kx).checked_sub(1).filter(|&ix| ix < s.width) else { continue };
                let tap = ky * 3 + kx;
                let q = (iy * s.width + ix) * s.cin;
                let inp = &input[q..q + s.cin];
                let dw = &mut d_weight[tap * s.cin * s.cout..][..s.cin * s.cout];
                for (ci, &xv) in inp.iter().enumerate() {
                    if xv != 0.0 {
                        axpy(&mut dw[ci * s.cout..][..s.cout], xv, g);
                    }
                }
                if let (Some(din), Some(wt)) = (d_input.as_deref_mut(), wt.as_ref()) {
                    let dst = &mut din[q..q + s.cin];
                    let wtap = &wt[tap * s.cout * s.cin..][..s.cout * s.cin];
                    for (co, &gv) in g.iter().enumerate() {
                        if gv != 0.0 {
                            axpy(dst, gv, &wtap[co * s.cin..][..s.cin]);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition of the correlation, no loop tricks.
    fn naive(input: &[f64], weight: &[f64], bias: &[f64], s: Shape) -> Vec<f64> {
        let mut out = vec![0.0; s.height * s.width * s.cout];
        for y in 0..s.height as isize {
            for x in 0..s.width as isize {
                for co in 0..s.cout {
                    let mut acc = bias[co];
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let (iy, ix) = (y + ky - 1, x + kx - 1);
                            if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                                continue;
                            }
                            for ci in 0..s.cin {
                                let xv = input[((iy as usize) * s.width + ix as usize) * s.cin + ci];
                                acc += xv * weight[(((ky * 3 + kx) as usize) * s.cin + ci) * s.cout + co];
                            }
                        }
                    }
                    out[((y as usize) * s.width + x as usize) * s.cout + co] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_definition() {
        let s = Shape { height: 5, width: 4, cin: 3, cout: 2 };
        let input: Vec<f64> = (0..60).map(|i| ((i * 37) % 17) as f64 / 17.0 - 0.3).collect();
        let weight: Vec<f64> = (0..54).map(|i| ((i * 13) % 7) as f64 / 7.0 - 0.5).collect();
        let bias = [0.1, -0.2];
        let a = forward(&input, &weight, &bias, s);
        let b = naive(&input, &weight, &bias, s);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <d_out, conv(x)> is linear in x and w; check both gradients against it.
        let s = Shape { height: 4, width: 3, cin: 2, cout: 3 };
        let input: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let weight: Vec<f64> = (0..54).map(|i| (i as f64 * 0.11).cos()).collect();
        let bias = [0.0; 3];
        let d_out: Vec<f64> = (0..36).map(|i| (i as f64 * 0.7).sin()).collect();
        let pixels: Vec<usize> = (0..12).collect();
        let mut dw = vec![0.0; 54];
        let mut db = vec![0.0; 3];
        let mut dx = vec![0.0; 24];
        backward_at(&input, &weight, s, &pixels, &d_out, &mut dw, &mut db, Some(&mut dx));
        let f = |inp: &[f64], w: &[f64]| -> f64 {
            forward(inp, w, &bias, s).iter().zip(&d_out).map(|(a, b)| a * b).sum()
        };
        for i in 0..24 {
            let mut e = vec![0.0; 24];
            e[i] = 1.0;
            let expect = f(&e, &weight);
            assert!((dx[i] - expect).abs() < 1e-12, "dx[{i}]");
        }
        for i in 0..54 {
            let mut e = vec![0.0; 54];
            e[i] = 1.0;
            let expect = f(&input, &e);
            assert!((dw[i] - expect).abs() < 1e-12, "dw[{i}]");
        }
        let sum: Vec<f64> = (0..3).map(|c| d_out.iter().skip(c).step_by(3).sum()).collect();
        assert!(db.iter().zip(&sum).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
