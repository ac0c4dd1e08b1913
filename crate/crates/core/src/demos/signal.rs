//! Signal kernels and block handling for the star pipeline.

use std::f64::consts::PI;
use std::fmt::Write as _;

use super::DemoError;

/// A complex block; index `i` is `real[i] + j·imag[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    pub seq: u32,
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
}

impl SampleBlock {
    pub fn new(seq: u32, real: Vec<f64>, imag: Vec<f64>) -> Result<Self, DemoError> {
        if real.len() != imag.len() {
            return Err(DemoError::Mismatched {
                real: real.len(),
                imag: imag.len(),
            });
        }
        Ok(Self { seq, real, imag })
    }

    /// A purely real block.
    pub fn real(seq: u32, real: Vec<f64>) -> Self {
        let imag = vec![0.0; real.len()];
        Self { seq, real, imag }
    }

    pub fn len(&self) -> usize {
        self.real.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.real
            .iter()
            .zip(&self.imag)
            .map(|(r, i)| r.hypot(*i))
            .collect()
    }
}

/// O(N²) transform with a positive exponent; the forward pass divides by N.
///
/// Output bin `i` is `Σₖ x[k]·e^{j·k·arg}` with `arg = ±2πi/N`, the sign
/// chosen by `forward`. The inverse applies no scaling, so the two passes
/// round-trip.
pub fn dft(block: &SampleBlock, forward: bool) -> Result<SampleBlock, DemoError> {
    let n = block.real.len();
    if n != block.imag.len() {
        return Err(DemoError::Mismatched {
            real: n,
            imag: block.imag.len(),
        });
    }
    if n == 0 {
        return Err(DemoError::Empty);
    }
    let direction = if forward { 1.0 } else { -1.0 };
    let mut real = vec![0.0; n];
    let mut imag = vec![0.0; n];
    for i in 0..n {
        let arg = direction * 2.0 * PI * i as f64 / n as f64;
        for k in 0..n {
            let (sin, cos) = (k as f64 * arg).sin_cos();
            real[i] += block.real[k] * cos - block.imag[k] * sin;
            imag[i] += block.real[k] * sin + block.imag[k] * cos;
        }
    }
    if forward {
        let scale = n as f64;
        real.iter_mut()
            .chain(imag.iter_mut())
            .for_each(|v| *v /= scale);
    }
    Ok(SampleBlock {
        seq: block.seq,
        real,
        imag,
    })
}

/// Mean and population standard deviation (divisor N).
pub fn mean_std(samples: &[f64]) -> Result<(f64, f64), DemoError> {
    if samples.is_empty() {
        return Err(DemoError::Empty);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Cuts a signal into blocks of `size`, zero-padding the last.
///
/// Returns the blocks and the true sample count of each.
pub fn split(
    real: &[f64],
    imag: &[f64],
    size: usize,
) -> Result<Vec<(SampleBlock, usize)>, DemoError> {
    if real.len() != imag.len() {
        return Err(DemoError::Mismatched {
            real: real.len(),
            imag: imag.len(),
        });
    }
    if size == 0 || real.is_empty() {
        return Err(DemoError::Empty);
    }
    Ok(real
        .chunks(size)
        .zip(imag.chunks(size))
        .enumerate()
        .map(|(b, (r, i))| {
            let len = r.len();
            let mut r = r.to_vec();
            let mut i = i.to_vec();
            r.resize(size, 0.0);
            i.resize(size, 0.0);
            (
                SampleBlock {
                    seq: b as u32,
                    real: r,
                    imag: i,
                },
                len,
            )
        })
        .collect())
}

/// `count` blocks of the sum of three unit sines on bins `bins` of `size`.
pub fn three_sines(size: usize, count: usize, bins: [usize; 3]) -> Vec<f64> {
    (0..size * count)
        .map(|t| {
            let phase = (t % size) as f64 / size as f64;
            bins.iter()
                .map(|&b| (2.0 * PI * b as f64 * phase).sin())
                .sum()
        })
        .collect()
}

/// Parses headerless "real imag" lines; a lone value is a real sample.
pub fn parse_signal(text: &str) -> Result<(Vec<f64>, Vec<f64>), DemoError> {
    let mut real = Vec::new();
    let mut imag = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || DemoError::BadSignal {
            line: no + 1,
            text: line.to_string(),
        };
        let mut fields = line.split_whitespace().map(str::parse::<f64>);
        let r = fields.next().ok_or_else(bad)?.map_err(|_| bad())?;
        let i = fields.next().transpose().map_err(|_| bad())?.unwrap_or(0.0);
        if fields.next().is_some() {
            return Err(bad());
        }
        real.push(r);
        imag.push(i);
    }
    Ok((real, imag))
}

/// Renders "real imag" lines with round-trip precision.
pub fn format_signal(real: &[f64], imag: &[f64]) -> String {
    let mut out = String::new();
    for (r, i) in real.iter().zip(imag) {
        let _ = writeln!(out, "{r:e} {i:e}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delta_becomes_flat() {
        let out = dft(&SampleBlock::real(0, vec![1.0, 0.0, 0.0, 0.0]), true).unwrap();
        assert_eq!(out.real, vec![0.25; 4]);
        assert!(out.imag.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn positive_exponent_convention() {
        // x[k] = e^{2πjk/N} lands in bin 1 only under the positive exponent.
        let n = 8;
        let (real, imag) = (0..n)
            .map(|k| (2.0 * PI * k as f64 / n as f64).sin_cos())
            .map(|(s, c)| (c, s))
            .unzip();
        let out = dft(&SampleBlock::new(0, real, imag).unwrap(), true).unwrap();
        let mags = out.magnitudes();
        assert!((mags[n - 1] - 1.0).abs() < 1e-12, "{mags:?}");
        assert!(mags[1] < 1e-12);
    }

    #[test]
    fn mismatched_and_empty_blocks() {
        assert!(SampleBlock::new(0, vec![1.0], vec![]).is_err());
        let bad = SampleBlock {
            seq: 0,
            real: vec![1.0],
            imag: vec![],
        };
        assert!(matches!(dft(&bad, true), Err(DemoError::Mismatched { .. })));
        assert!(matches!(
            dft(&SampleBlock::real(0, vec![]), true),
            Err(DemoError::Empty)
        ));
    }

    #[test]
    fn mean_std_by_hand() {
        assert_eq!(mean_std(&[0.0; 7]).unwrap(), (0.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(m, 3.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[2.5; 3]).unwrap(), (2.5, 0.0));
        assert!(mean_std(&[]).is_err());
    }

    #[test]
    fn split_pads_the_last_block() {
        let real: Vec<f64> = (0..10).map(f64::from).collect();
        let blocks = split(&real, &[0.0; 10], 4).unwrap();
        assert_eq!(blocks.len(), 3);
        assert_eq!(blocks[2].0.real, vec![8.0, 9.0, 0.0, 0.0]);
        assert_eq!(blocks[2].1, 2);
        assert_eq!(blocks[1].0.seq, 1);
    }

    #[test]
    fn signal_text_round_trip() {
        let text = "1 0\n  \n2.5 -1\n3\n";
        let (r, i) = parse_signal(text).unwrap();
        assert_eq!(
            (r.clone(), i.clone()),
            (vec![1.0, 2.5, 3.0], vec![0.0, -1.0, 0.0])
        );
        assert_eq!(parse_signal(&format_signal(&r, &i)).unwrap(), (r, i));
        assert!(matches!(
            parse_signal("1 x"),
            Err(DemoError::BadSignal { line: 1, .. })
        ));
        assert!(parse_signal("1 2 3").is_err());
    }

    proptest! {
        #[test]
        fn forward_then_inverse_is_identity(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40)) {
            let (real, imag): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let block = SampleBlock::new(3, real, imag).unwrap();
            let back = dft(&dft(&block, true).unwrap(), false).unwrap();
            prop_assert_eq!(back.seq, 3);
            for (a, b) in back.real.iter().chain(&back.imag).zip(block.real.iter().chain(&block.imag)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
