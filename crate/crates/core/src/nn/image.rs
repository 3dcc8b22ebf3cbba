//! Planar images in channel-major layout and the preprocessing helpers the
//! encoder expects.

use crate::harness::pgm::PgmImage;

/// `channels × height × width`, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(channels * height * width, data.len(), "image buffer size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    /// Gray levels scaled to `[0, 1]` and replicated to three channels.
    pub fn from_pgm(img: &PgmImage) -> Self {
        let scale = 1.0 / f64::from(img.maxval.max(1));
        let plane: Vec<f64> = img.data.iter().map(|v| f64::from(*v) * scale).collect();
        let mut data = Vec::with_capacity(3 * plane.len());
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Self::new(3, img.height, img.width, data)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Bilinear resampling with pixel-center alignment. Same-size input is
    /// returned unchanged.
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
            (0..out)
                .map(|o| {
                    let src = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                    let i0 = src.floor() as usize;
                    let i1 = (i0 + 1).min(inp - 1);
                    (i0, i1, src - i0 as f64)
                })
                .collect()
        };
        let ys = axis(height, self.height);
        let xs = axis(width, self.width);
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            let p = self.plane(c);
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let top = p[y0 * self.width + x0] * (1.0 - fx) + p[y0 * self.width + x1] * fx;
                    let bot = p[y1 * self.width + x0] * (1.0 - fx) + p[y1 * self.width + x1] * fx;
                    data.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        Image::new(self.channels, height, width, data)
    }

    pub fn channel_means(&self) -> Vec<f64> {
        (0..self.channels)
            .map(|c| self.plane(c).iter().sum::<f64>() / (self.height * self.width) as f64)
            .collect()
    }

    pub fn subtract_mean(&mut self, mean: &[f64]) {
        let n = self.height * self.width;
        for (c, m) in mean.iter().enumerate().take(self.channels) {
            self.data[c * n..(c + 1) * n].iter_mut().for_each(|v| *v -= m);
        }
    }
}

/// Per-channel mean over all pixels of `images`, which must share one size.
pub fn mean_pixel<'a>(images: impl IntoIterator<Item = &'a Image>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for img in images {
        if sum.is_empty() {
            sum = vec![0.0; img.channels];
        }
        for (s, m) in sum.iter_mut().zip(img.channel_means()) {
            *s += m;
        }
        count += 1;
    }
    sum.iter().map(|s| s / count.max(1) as f64).collect()
}
