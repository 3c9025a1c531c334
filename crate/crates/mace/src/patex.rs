//! Pattern extraction: per-service Fourier-basis selection, the
//! context-aware DFT/IDFT restricted to that basis, and the 3-channel
//! frequency characterization fed to the autoencoder.

use ndarray::Array2;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::TimeSeriesWindow;

/// Per-service, per-feature selected frequency indices: the normal-pattern
/// subspace. Trigonometric tables for the selected bins are cached at
/// construction.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub service_id: String,
    pub window_size: usize,
    indices: Vec<Vec<usize>>,
    tallies: Vec<Vec<usize>>,
    cos: Vec<Vec<Vec<f64>>>,
    sin: Vec<Vec<Vec<f64>>>,
}

impl BasisSet {
    pub fn new(
        service_id: &str,
        window_size: usize,
        indices: Vec<Vec<usize>>,
        tallies: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if window_size == 0 {
            return Err(Error::InvalidInput("window_size must be >= 1".into()));
        }
        if indices.is_empty() {
            return Err(Error::InvalidInput("basis needs >= 1 feature".into()));
        }
        if indices.len() != tallies.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} index rows vs {} tally rows",
                indices.len(),
                tallies.len()
            )));
        }
        let n_bins = window_size / 2 + 1;
        let k = indices[0].len();
        for (f, row) in indices.iter().enumerate() {
            if row.len() != k || row.is_empty() {
                return Err(Error::ShapeMismatch(format!(
                    "feature {f} selects {} bases, expected {k} > 0",
                    row.len()
                )));
            }
            if tallies[f].len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "feature {f}: tally length {} != {k}",
                    tallies[f].len()
                )));
            }
            for pair in row.windows(2) {
                if pair[0] >= pair[1] {
                    return Err(Error::InvalidInput(format!(
                        "feature {f}: indices must be strictly ascending"
                    )));
                }
            }
            if let Some(&bad) = row.iter().find(|&&w| w >= n_bins) {
                return Err(Error::InvalidInput(format!(
                    "feature {f}: frequency index {bad} >= {n_bins}"
                )));
            }
        }
        let mut cos = Vec::with_capacity(indices.len());
        let mut sin = Vec::with_capacity(indices.len());
        for row in &indices {
            let mut cf = Vec::with_capacity(row.len());
            let mut sf = Vec::with_capacity(row.len());
            for &omega in row {
                let mut ct = Vec::with_capacity(window_size);
                let mut st = Vec::with_capacity(window_size);
                for t in 0..window_size {
                    let theta = 2.0 * PI * omega as f64 * t as f64 / window_size as f64;
                    ct.push(theta.cos());
                    st.push(theta.sin());
                }
                cf.push(ct);
                sf.push(st);
            }
            cos.push(cf);
            sin.push(sf);
        }
        Ok(Self {
            service_id: service_id.to_string(),
            window_size,
            indices,
            tallies,
            cos,
            sin,
        })
    }

    /// Basis containing every frequency bin (selection vacuous); used by the
    /// full-spectrum ablation and inversion tests.
    pub fn full(service_id: &str, window_size: usize, m_feat: usize) -> Result<Self> {
        let n_bins = window_size / 2 + 1;
        let all: Vec<usize> = (0..n_bins).collect();
        Self::new(
            service_id,
            window_size,
            vec![all; m_feat],
            vec![vec![0; n_bins]; m_feat],
        )
    }

    pub fn m_feat(&self) -> usize {
        self.indices.len()
    }

    pub fn k_bases(&self) -> usize {
        self.indices[0].len()
    }

    pub fn indices(&self, feature: usize) -> &[usize] {
        &self.indices[feature]
    }

    pub fn tallies(&self, feature: usize) -> &[usize] {
        &self.tallies[feature]
    }
}

/// Complex coefficients at the selected frequencies, one row per feature.
#[derive(Debug, Clone)]
pub struct Spectrum {
    coeffs: Vec<Vec<Complex64>>,
}

impl Spectrum {
    pub fn new(coeffs: Vec<Vec<Complex64>>) -> Result<Self> {
        if coeffs.is_empty() || coeffs[0].is_empty() {
            return Err(Error::InvalidInput("empty spectrum".into()));
        }
        let k = coeffs[0].len();
        if coeffs.iter().any(|row| row.len() != k) {
            return Err(Error::ShapeMismatch("ragged spectrum rows".into()));
        }
        Ok(Self { coeffs })
    }

    /// Rebuild coefficients from an amplitude matrix and a phase matrix
    /// (used after the autoencoder reconstructs amplitudes).
    pub fn from_amp_phase(amps: &Array2<f64>, phases: &Array2<f64>) -> Result<Self> {
        if amps.dim() != phases.dim() {
            return Err(Error::ShapeMismatch(format!(
                "amplitudes {:?} vs phases {:?}",
                amps.dim(),
                phases.dim()
            )));
        }
        let coeffs = amps
            .rows()
            .into_iter()
            .zip(phases.rows())
            .map(|(ar, pr)| {
                ar.iter()
                    .zip(pr)
                    .map(|(&a, &p)| Complex64::from_polar(a, p))
                    .collect()
            })
            .collect();
        Spectrum::new(coeffs)
    }

    pub fn m_feat(&self) -> usize {
        self.coeffs.len()
    }

    pub fn k_bases(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn coeff(&self, feature: usize, j: usize) -> Complex64 {
        self.coeffs[feature][j]
    }

    pub fn amplitudes(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.m_feat(), self.k_bases()), |(f, j)| {
            self.coeffs[f][j].norm()
        })
    }

    pub fn phases(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.m_feat(), self.k_bases()), |(f, j)| {
            self.coeffs[f][j].arg()
        })
    }
}

/// The 3-channel tensor fed to the autoencoder: amplitudes plus explicit
/// sin/cos frequency marks. Phases ride alongside for reconstruction; they
/// are not part of the learned representation.
#[derive(Debug, Clone)]
pub struct FrequencyRepresentation {
    pub amps: Array2<f64>,
    pub sin_mark: Array2<f64>,
    pub cos_mark: Array2<f64>,
    pub phases: Array2<f64>,
}

impl FrequencyRepresentation {
    pub fn m_feat(&self) -> usize {
        self.amps.nrows()
    }

    pub fn k_bases(&self) -> usize {
        self.amps.ncols()
    }
}

fn full_bin_amplitudes(row: &[f64], w: usize) -> Vec<f64> {
    let n_bins = w / 2 + 1;
    let mut amps = Vec::with_capacity(n_bins);
    for omega in 0..n_bins {
        let mut re = 0.0;
        let mut im = 0.0;
        for (t, &v) in row.iter().enumerate() {
            let theta = 2.0 * PI * omega as f64 * t as f64 / w as f64;
            re += v * theta.cos();
            im -= v * theta.sin();
        }
        amps.push((re * re + im * im).sqrt());
    }
    amps
}

/// Count, per feature, how often each frequency bin ranks in the top
/// `k_bases` by amplitude across the training windows, then keep the
/// `k_bases` bins with the highest incidence. Ties break toward the lower
/// frequency index at both stages.
pub fn select_basis(train_windows: &[TimeSeriesWindow], k_bases: usize) -> Result<BasisSet> {
    let first = train_windows
        .first()
        .ok_or_else(|| Error::InvalidInput("basis selection needs >= 1 window".into()))?;
    let w = first.len();
    let m = first.m_feat();
    let n_bins = w / 2 + 1;
    if k_bases == 0 || k_bases > n_bins {
        return Err(Error::InvalidInput(format!(
            "k_bases must be in [1, {n_bins}], got {k_bases}"
        )));
    }
    for win in train_windows {
        if win.len() != w || win.m_feat() != m {
            return Err(Error::ShapeMismatch(format!(
                "window at offset {} is {}x{}, expected {m}x{w}",
                win.start_index,
                win.m_feat(),
                win.len()
            )));
        }
    }
    let mut indices = Vec::with_capacity(m);
    let mut tallies = Vec::with_capacity(m);
    for f in 0..m {
        let mut tally = vec![0usize; n_bins];
        for win in train_windows {
            let row: Vec<f64> = win.values.row(f).to_vec();
            let amps = full_bin_amplitudes(&row, w);
            let mut order: Vec<usize> = (0..n_bins).collect();
            order.sort_by(|&a, &b| {
                amps[b]
                    .partial_cmp(&amps[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            for &omega in order.iter().take(k_bases) {
                tally[omega] += 1;
            }
        }
        let mut order: Vec<usize> = (0..n_bins).collect();
        order.sort_by(|&a, &b| tally[b].cmp(&tally[a]).then(a.cmp(&b)));
        let mut chosen: Vec<usize> = order.into_iter().take(k_bases).collect();
        chosen.sort_unstable();
        let chosen_tally: Vec<usize> = chosen.iter().map(|&i| tally[i]).collect();
        indices.push(chosen);
        tallies.push(chosen_tally);
    }
    BasisSet::new(&first.service_id, w, indices, tallies)
}

/// Direct-summation DFT evaluated only at the basis frequencies:
/// F = sum_t x(t) e^(-i 2 pi omega t / W).
pub fn ca_dft(window: &TimeSeriesWindow, basis: &BasisSet) -> Result<Spectrum> {
    if window.len() != basis.window_size {
        return Err(Error::ShapeMismatch(format!(
            "window length {} != basis window size {}",
            window.len(),
            basis.window_size
        )));
    }
    if window.m_feat() != basis.m_feat() {
        return Err(Error::ShapeMismatch(format!(
            "window has {} features, basis {}",
            window.m_feat(),
            basis.m_feat()
        )));
    }
    let mut coeffs = Vec::with_capacity(basis.m_feat());
    for f in 0..basis.m_feat() {
        let row = window.values.row(f);
        let mut feat = Vec::with_capacity(basis.k_bases());
        for j in 0..basis.k_bases() {
            let cos = &basis.cos[f][j];
            let sin = &basis.sin[f][j];
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in row.iter().enumerate() {
                re += v * cos[t];
                im -= v * sin[t];
            }
            feat.push(Complex64::new(re, im));
        }
        coeffs.push(feat);
    }
    Spectrum::new(coeffs)
}

/// Inverse transform using only the basis bins, with real-signal
/// conjugate-pair completion: bins other than 0 and W/2 count twice.
pub fn ca_idft(spectrum: &Spectrum, basis: &BasisSet) -> Result<Array2<f64>> {
    if spectrum.m_feat() != basis.m_feat() || spectrum.k_bases() != basis.k_bases() {
        return Err(Error::ShapeMismatch(format!(
            "spectrum {}x{} vs basis {}x{}",
            spectrum.m_feat(),
            spectrum.k_bases(),
            basis.m_feat(),
            basis.k_bases()
        )));
    }
    let w = basis.window_size;
    let mut out = Array2::zeros((basis.m_feat(), w));
    let inv_w = 1.0 / w as f64;
    for f in 0..basis.m_feat() {
        for (j, &omega) in basis.indices[f].iter().enumerate() {
            let c = if omega == 0 || (w % 2 == 0 && omega == w / 2) {
                1.0
            } else {
                2.0
            };
            let coeff = spectrum.coeff(f, j);
            let cos = &basis.cos[f][j];
            let sin = &basis.sin[f][j];
            for t in 0..w {
                out[[f, t]] += c * inv_w * (coeff.re * cos[t] - coeff.im * sin[t]);
            }
        }
    }
    Ok(out)
}

/// Assemble the 3-channel representation: amplitudes plus scalar marks
/// sin(2 pi omega / W) and cos(2 pi omega / W) per selected bin.
pub fn characterize(spectrum: &Spectrum, basis: &BasisSet) -> Result<FrequencyRepresentation> {
    if spectrum.m_feat() != basis.m_feat() || spectrum.k_bases() != basis.k_bases() {
        return Err(Error::ShapeMismatch(format!(
            "spectrum {}x{} vs basis {}x{}",
            spectrum.m_feat(),
            spectrum.k_bases(),
            basis.m_feat(),
            basis.k_bases()
        )));
    }
    let (m, k) = (basis.m_feat(), basis.k_bases());
    let w = basis.window_size as f64;
    let sin_mark = Array2::from_shape_fn((m, k), |(f, j)| {
        (2.0 * PI * basis.indices[f][j] as f64 / w).sin()
    });
    let cos_mark = Array2::from_shape_fn((m, k), |(f, j)| {
        (2.0 * PI * basis.indices[f][j] as f64 / w).cos()
    });
    Ok(FrequencyRepresentation {
        amps: spectrum.amplitudes(),
        sin_mark,
        cos_mark,
        phases: spectrum.phases(),
    })
}

/// Persist basis sets as CSV rows `service_id,feature_index,freq_index,tally`.
pub fn save_basis_csv(sets: &[BasisSet], path: &Path) -> Result<()> {
    let mut out = String::new();
    for set in sets {
        for f in 0..set.m_feat() {
            for (j, &omega) in set.indices[f].iter().enumerate() {
                writeln!(out, "{},{},{},{}", set.service_id, f, omega, set.tallies[f][j])
                    .expect("string write");
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load basis sets written by [`save_basis_csv`]. The window size is not
/// part of the file format and must come from configuration.
pub fn load_basis_csv(path: &Path, window_size: usize) -> Result<Vec<BasisSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: std::collections::HashMap<String, Vec<(usize, usize, usize)>> =
        std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Data(format!(
                "{}: line {}: expected 4 fields, got {}",
                path.display(),
                lineno + 1,
                parts.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {}: bad {what} {s:?}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        let service = parts[0].to_string();
        let feature = parse(parts[1], "feature index")?;
        let freq = parse(parts[2], "frequency index")?;
        let tally = parse(parts[3], "tally")?;
        if !rows.contains_key(&service) {
            order.push(service.clone());
        }
        rows.entry(service).or_default().push((feature, freq, tally));
    }
    let mut sets = Vec::with_capacity(order.len());
    for service in order {
        let entries = &rows[&service];
        let m = entries.iter().map(|&(f, _, _)| f).max().unwrap() + 1;
        let mut indices = vec![Vec::new(); m];
        let mut tallies = vec![Vec::new(); m];
        for &(f, freq, tally) in entries {
            indices[f].push(freq);
            tallies[f].push(tally);
        }
        for f in 0..m {
            let mut paired: Vec<(usize, usize)> =
                indices[f].iter().copied().zip(tallies[f].iter().copied()).collect();
            paired.sort_unstable();
            indices[f] = paired.iter().map(|&(i, _)| i).collect();
            tallies[f] = paired.iter().map(|&(_, t)| t).collect();
        }
        sets.push(BasisSet::new(&service, window_size, indices, tallies)?);
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const W: usize = 40;

    fn sine_window(freq: usize, amp: f64) -> TimeSeriesWindow {
        let values = Array2::from_shape_fn((1, W), |(_, t)| {
            amp * (2.0 * PI * freq as f64 * t as f64 / W as f64).sin()
        });
        TimeSeriesWindow::new(values, 0, "svc").unwrap()
    }

    fn random_window(seed: u64, m: usize) -> TimeSeriesWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((m, W), |_| rng.random_range(-1.0..1.0));
        TimeSeriesWindow::new(values, 0, "svc").unwrap()
    }

    /// Independent O(W^2) full DFT, the subset-consistency oracle.
    fn naive_full_dft(row: &[f64], w: usize) -> Vec<Complex64> {
        (0..w / 2 + 1)
            .map(|omega| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, &v) in row.iter().enumerate() {
                    let theta = 2.0 * PI * omega as f64 * t as f64 / w as f64;
                    acc += Complex64::new(v * theta.cos(), -v * theta.sin());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn single_dominant_line_selected() {
        let windows: Vec<_> = (0..4).map(|_| sine_window(3, 1.0)).collect();
        let basis = select_basis(&windows, 1).unwrap();
        assert_eq!(basis.indices(0), &[3]);
    }

    #[test]
    fn alternating_lines_both_selected() {
        let mut windows = Vec::new();
        for i in 0..6 {
            windows.push(sine_window(if i % 2 == 0 { 3 } else { 7 }, 1.0));
        }
        let basis = select_basis(&windows, 2).unwrap();
        assert_eq!(basis.indices(0), &[3, 7]);
    }

    #[test]
    fn full_k_selects_every_bin() {
        let windows = vec![sine_window(3, 1.0)];
        let basis = select_basis(&windows, W / 2 + 1).unwrap();
        let all: Vec<usize> = (0..W / 2 + 1).collect();
        assert_eq!(basis.indices(0), &all[..]);
    }

    #[test]
    fn empty_input_is_error() {
        assert!(select_basis(&[], 2).is_err());
    }

    #[test]
    fn selection_is_deterministic() {
        let windows: Vec<_> = (0..5).map(|s| random_window(s, 2)).collect();
        let a = select_basis(&windows, 5).unwrap();
        let b = select_basis(&windows, 5).unwrap();
        for f in 0..2 {
            assert_eq!(a.indices(f), b.indices(f));
            assert_eq!(a.tallies(f), b.tallies(f));
        }
    }

    #[test]
    fn dft_of_sine_has_closed_form() {
        let win = sine_window(3, 1.0);
        let basis = BasisSet::new("svc", W, vec![vec![3]], vec![vec![0]]).unwrap();
        let spec = ca_dft(&win, &basis).unwrap();
        assert_abs_diff_eq!(spec.coeff(0, 0).norm(), W as f64 / 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(spec.coeff(0, 0).arg(), -PI / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn dc_bin_of_constant() {
        let values = Array2::from_elem((1, W), 0.75);
        let win = TimeSeriesWindow::new(values, 0, "svc").unwrap();
        let basis = BasisSet::new("svc", W, vec![vec![0]], vec![vec![0]]).unwrap();
        let spec = ca_dft(&win, &basis).unwrap();
        assert_abs_diff_eq!(spec.coeff(0, 0).re, 0.75 * W as f64, epsilon = 1e-9);
        assert_abs_diff_eq!(spec.coeff(0, 0).arg(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_window_gives_zero_spectrum_and_back() {
        let values = Array2::zeros((2, W));
        let win = TimeSeriesWindow::new(values, 0, "svc").unwrap();
        let basis = BasisSet::full("svc", W, 2).unwrap();
        let spec = ca_dft(&win, &basis).unwrap();
        assert!(spec.amplitudes().iter().all(|&a| a == 0.0));
        let back = ca_idft(&spec, &basis).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_basis_round_trip() {
        let win = random_window(11, 3);
        let basis = BasisSet::full("svc", W, 3).unwrap();
        let spec = ca_dft(&win, &basis).unwrap();
        let back = ca_idft(&spec, &basis).unwrap();
        for (a, b) in win.values.iter().zip(back.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn subset_matches_full_dft_oracle() {
        let win = random_window(5, 2);
        let basis = BasisSet::new(
            "svc",
            W,
            vec![vec![0, 3, 9, 20], vec![1, 2, 5, 13]],
            vec![vec![0; 4]; 2],
        )
        .unwrap();
        let spec = ca_dft(&win, &basis).unwrap();
        for f in 0..2 {
            let oracle = naive_full_dft(&win.values.row(f).to_vec(), W);
            for (j, &omega) in basis.indices(f).iter().enumerate() {
                assert_abs_diff_eq!(spec.coeff(f, j).re, oracle[omega].re, epsilon = 1e-12);
                assert_abs_diff_eq!(spec.coeff(f, j).im, oracle[omega].im, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn restricted_idft_is_the_orthogonal_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise: Vec<f64> = (0..W).map(|_| 0.01 * rng.random_range(-1.0..1.0)).collect();
        let clean: Vec<f64> = (0..W)
            .map(|t| (2.0 * PI * 3.0 * t as f64 / W as f64).sin())
            .collect();
        let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + n).collect();
        let values = Array2::from_shape_vec((1, W), noisy.clone()).unwrap();
        let win = TimeSeriesWindow::new(values, 0, "svc").unwrap();
        let basis = BasisSet::new("svc", W, vec![vec![3]], vec![vec![0]]).unwrap();
        let spec = ca_dft(&win, &basis).unwrap();
        let back = ca_idft(&spec, &basis).unwrap();

        // Projection oracle: inner products against the bin-3 pair.
        let cosw: Vec<f64> = (0..W)
            .map(|t| (2.0 * PI * 3.0 * t as f64 / W as f64).cos())
            .collect();
        let sinw: Vec<f64> = (0..W)
            .map(|t| (2.0 * PI * 3.0 * t as f64 / W as f64).sin())
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let cc = dot(&noisy, &cosw) / dot(&cosw, &cosw);
        let ss = dot(&noisy, &sinw) / dot(&sinw, &sinw);
        for t in 0..W {
            assert_abs_diff_eq!(back[[0, t]], cc * cosw[t] + ss * sinw[t], epsilon = 1e-9);
        }

        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        let err: Vec<f64> = (0..W).map(|t| back[[0, t]] - clean[t]).collect();
        assert!(rms(&err) <= rms(&noise));
    }

    #[test]
    fn dft_is_linear() {
        let x = random_window(1, 1);
        let y = random_window(2, 1);
        let basis = BasisSet::new("svc", W, vec![vec![2, 7, 11]], vec![vec![0; 3]]).unwrap();
        let (a, b) = (1.7, -0.4);
        let mixed = TimeSeriesWindow::new(&x.values * a + &y.values * b, 0, "svc").unwrap();
        let sx = ca_dft(&x, &basis).unwrap();
        let sy = ca_dft(&y, &basis).unwrap();
        let sm = ca_dft(&mixed, &basis).unwrap();
        for j in 0..3 {
            let expect = sx.coeff(0, j) * a + sy.coeff(0, j) * b;
            assert_abs_diff_eq!(sm.coeff(0, j).re, expect.re, epsilon = 1e-9);
            assert_abs_diff_eq!(sm.coeff(0, j).im, expect.im, epsilon = 1e-9);
        }
    }

    #[test]
    fn characterize_marks_and_amplitudes() {
        let win = sine_window(10, 1.0);
        let basis = BasisSet::new("svc", W, vec![vec![10]], vec![vec![0]]).unwrap();
        let spec = ca_dft(&win, &basis).unwrap();
        let rep = characterize(&spec, &basis).unwrap();
        assert_abs_diff_eq!(rep.sin_mark[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.cos_mark[[0, 0]], 0.0, epsilon = 1e-12);
        assert_eq!(rep.amps, spec.amplitudes());

        let zero = Spectrum::new(vec![vec![Complex64::new(0.0, 0.0)]]).unwrap();
        let rep0 = characterize(&zero, &basis).unwrap();
        assert!(rep0.amps.iter().all(|&a| a == 0.0));
        assert_eq!(rep0.sin_mark, rep.sin_mark);
        assert_eq!(rep0.cos_mark, rep.cos_mark);
    }

    #[test]
    fn basis_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("basis.csv");
        let windows: Vec<_> = (0..3).map(|s| random_window(s, 2)).collect();
        let basis = select_basis(&windows, 4).unwrap();
        save_basis_csv(std::slice::from_ref(&basis), &path).unwrap();
        let loaded = load_basis_csv(&path, W).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].service_id, basis.service_id);
        for f in 0..2 {
            assert_eq!(loaded[0].indices(f), basis.indices(f));
            assert_eq!(loaded[0].tallies(f), basis.tallies(f));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn prop_projection_never_gains_energy(seed in 0u64..1000, k in 1usize..8) {
            let win = random_window(seed, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
            let mut bins: Vec<usize> = (0..W / 2 + 1).collect();
            for i in (1..bins.len()).rev() {
                let j = rng.random_range(0..=i);
                bins.swap(i, j);
            }
            let mut chosen: Vec<usize> = bins.into_iter().take(k).collect();
            chosen.sort_unstable();
            let tally = vec![0; chosen.len()];
            let basis = BasisSet::new("svc", W, vec![chosen], vec![tally]).unwrap();
            let spec = ca_dft(&win, &basis).unwrap();
            let back = ca_idft(&spec, &basis).unwrap();
            let energy_in: f64 = win.values.iter().map(|v| v * v).sum();
            let energy_out: f64 = back.iter().map(|v| v * v).sum();
            prop_assert!(energy_out <= energy_in + 1e-9);
        }
    }
}
