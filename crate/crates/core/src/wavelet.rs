//! Multi-level orthonormal 2D Haar analysis and synthesis.
//!
//! Every band of a spectrum has the spatial size of the deepest level
//! (`H / 2^levels × W / 2^levels`). Detail bands of shallower levels are
//! larger than that, so they are split into `4^(levels - level)` polyphase
//! planes before packing. Bands are ordered deepest level first; within a
//! level the order is LL (deepest level only), LH, HL, HH, each group holding
//! every source channel in turn. For three source channels and two levels
//! this puts the deepest LL of R, G and B at bands 0, 1 and 2.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::planes::Planes;

/// An `H × W × C` raster with interleaved channels and a declared value range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
    range: (T, T),
}

impl<T: Float> ImageGrid<T> {
    /// Builds a grid, checking the element count and that every value is finite.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<T>,
        range: (T, T),
    ) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image element {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            range,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
            range: (-T::one(), T::one()),
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        range: (T, T),
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
            range,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> (T, T) {
        self.range
    }

    pub fn with_range(mut self, range: (T, T)) -> Self {
        self.range = range;
        self
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn energy(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Channel planes in channel-major order.
    pub fn to_planes(&self) -> Planes<T> {
        Planes::from_fn(self.channels, self.height, self.width, |c, y, x| {
            self.get(y, x, c)
        })
    }

    pub fn from_planes(planes: &Planes<T>, range: (T, T)) -> Self {
        let (c, h, w) = planes.shape();
        Self::from_fn(h, w, c, range, |y, x, ch| planes.get(ch, y, x))
    }

    pub fn cast<U: Float>(&self) -> ImageGrid<U> {
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::from(v).unwrap()).collect(),
            range: (U::from(self.range.0).unwrap(), U::from(self.range.1).unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subband {
    LL,
    /// High-pass along rows (horizontal differences).
    LH,
    /// High-pass along columns (vertical differences).
    HL,
    HH,
}

impl Subband {
    pub fn name(self) -> &'static str {
        match self {
            Subband::LL => "LL",
            Subband::LH => "LH",
            Subband::HL => "HL",
            Subband::HH => "HH",
        }
    }
}

/// Where one packed band comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandInfo {
    pub level: usize,
    pub subband: Subband,
    pub channel: usize,
    /// Polyphase component `py * f + px` with `f = 2^(levels - level)`; always 0 at the deepest level.
    pub phase: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandLayout {
    levels: usize,
    source_channels: usize,
    ordering: Vec<BandInfo>,
}

impl BandLayout {
    pub fn new(levels: usize, source_channels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidArgument("levels must be at least 1".into()));
        }
        if source_channels == 0 {
            return Err(Error::InvalidArgument("source_channels must be at least 1".into()));
        }
        let mut ordering = Vec::with_capacity(source_channels << (2 * levels));
        for channel in 0..source_channels {
            ordering.push(BandInfo {
                level: levels,
                subband: Subband::LL,
                channel,
                phase: 0,
            });
        }
        for level in (1..=levels).rev() {
            let phases = 1usize << (2 * (levels - level));
            for subband in [Subband::LH, Subband::HL, Subband::HH] {
                for channel in 0..source_channels {
                    for phase in 0..phases {
                        ordering.push(BandInfo {
                            level,
                            subband,
                            channel,
                            phase,
                        });
                    }
                }
            }
        }
        Ok(Self {
            levels,
            source_channels,
            ordering,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn source_channels(&self) -> usize {
        self.source_channels
    }

    pub fn ordering(&self) -> &[BandInfo] {
        &self.ordering
    }

    pub fn total_bands(&self) -> usize {
        self.ordering.len()
    }

    /// Index of a band in the packing.
    pub fn index_of(&self, level: usize, subband: Subband, channel: usize, phase: usize) -> Option<usize> {
        self.ordering.iter().position(|b| {
            b.level == level && b.subband == subband && b.channel == channel && b.phase == phase
        })
    }

    /// Index of the first band of a detail group (level, subband, channel).
    fn detail_offset(&self, level: usize, subband: Subband, channel: usize) -> usize {
        let c = self.source_channels;
        // deepest level: LL group, then LH/HL/HH groups of `c` bands each
        let mut offset = c;
        for l in ((level + 1)..=self.levels).rev() {
            offset += 3 * c * (1 << (2 * (self.levels - l)));
        }
        let phases = 1 << (2 * (self.levels - level));
        let sub = match subband {
            Subband::LH => 0,
            Subband::HL => 1,
            Subband::HH => 2,
            Subband::LL => unreachable!("LL has no detail offset"),
        };
        offset + (sub * c + channel) * phases
    }
}

/// Channel-packed Haar coefficients of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletSpectrum<T> {
    layout: BandLayout,
    bands: Planes<T>,
    scale_applied: T,
}

impl<T: Float> WaveletSpectrum<T> {
    pub fn new(layout: BandLayout, bands: Planes<T>, scale_applied: T) -> Result<Self> {
        if bands.channels() != layout.total_bands() {
            return Err(Error::LayoutMismatch(format!(
                "{} bands supplied, layout has {}",
                bands.channels(),
                layout.total_bands()
            )));
        }
        Ok(Self {
            layout,
            bands,
            scale_applied,
        })
    }

    pub fn layout(&self) -> &BandLayout {
        &self.layout
    }

    pub fn bands(&self) -> &Planes<T> {
        &self.bands
    }

    pub fn bands_mut(&mut self) -> &mut Planes<T> {
        &mut self.bands
    }

    pub fn into_bands(self) -> Planes<T> {
        self.bands
    }

    pub fn band_count(&self) -> usize {
        self.bands.channels()
    }

    pub fn bands_height(&self) -> usize {
        self.bands.height()
    }

    pub fn bands_width(&self) -> usize {
        self.bands.width()
    }

    pub fn band(&self, i: usize) -> &[T] {
        self.bands.plane(i)
    }

    pub fn scale_applied(&self) -> T {
        self.scale_applied
    }

    pub fn energy(&self) -> T {
        self.bands.sum_squares()
    }
}

/// Low/high partition of a spectrum's bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSplit<T> {
    pub layout: BandLayout,
    pub scale_applied: T,
    pub low: Planes<T>,
    pub high: Planes<T>,
}

impl<T: Float> SpectrumSplit<T> {
    pub fn n_low(&self) -> usize {
        self.low.channels()
    }
}

fn check_divisible(image_h: usize, image_w: usize, levels: usize) -> Result<usize> {
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be at least 1".into()));
    }
    let factor = 1usize << levels;
    if image_h % factor != 0 || image_h == 0 {
        return Err(Error::NotDivisible {
            dimension: "height",
            size: image_h,
            factor,
        });
    }
    if image_w % factor != 0 || image_w == 0 {
        return Err(Error::NotDivisible {
            dimension: "width",
            size: image_w,
            factor,
        });
    }
    Ok(factor)
}

/// One analysis level on an `h × w` plane; returns (LL, LH, HL, HH) of size `h/2 × w/2`.
fn haar_analyze<T: Float>(plane: &[T], h: usize, w: usize) -> [Vec<T>; 4] {
    let half = T::from(0.5).unwrap();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = [
        Vec::with_capacity(oh * ow),
        Vec::with_capacity(oh * ow),
        Vec::with_capacity(oh * ow),
        Vec::with_capacity(oh * ow),
    ];
    for y in 0..oh {
        let r0 = &plane[2 * y * w..(2 * y + 1) * w];
        let r1 = &plane[(2 * y + 1) * w..(2 * y + 2) * w];
        for x in 0..ow {
            let (a, b) = (r0[2 * x], r0[2 * x + 1]);
            let (c, d) = (r1[2 * x], r1[2 * x + 1]);
            out[0].push((a + b + c + d) * half);
            out[1].push((a - b + c - d) * half);
            out[2].push((a + b - c - d) * half);
            out[3].push((a - b - c + d) * half);
        }
    }
    out
}

/// Inverse of [`haar_analyze`]; subbands are `h × w`, output is `2h × 2w`.
fn haar_synthesize<T: Float>(bands: [&[T]; 4], h: usize, w: usize) -> Vec<T> {
    let half = T::from(0.5).unwrap();
    let ow = 2 * w;
    let mut out = vec![T::zero(); 4 * h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (ll, lh, hl, hh) = (bands[0][i], bands[1][i], bands[2][i], bands[3][i]);
            out[2 * y * ow + 2 * x] = (ll + lh + hl + hh) * half;
            out[2 * y * ow + 2 * x + 1] = (ll - lh + hl - hh) * half;
            out[(2 * y + 1) * ow + 2 * x] = (ll + lh - hl - hh) * half;
            out[(2 * y + 1) * ow + 2 * x + 1] = (ll - lh - hl + hh) * half;
        }
    }
    out
}

/// Splits an `(h·f) × (w·f)` plane into `f²` decimated `h × w` planes.
fn polyphase_split<T: Float>(plane: &[T], h: usize, w: usize, f: usize) -> Vec<Vec<T>> {
    let full_w = w * f;
    (0..f * f)
        .map(|phase| {
            let (py, px) = (phase / f, phase % f);
            let mut out = Vec::with_capacity(h * w);
            for y in 0..h {
                let row = &plane[(y * f + py) * full_w..];
                for x in 0..w {
                    out.push(row[x * f + px]);
                }
            }
            out
        })
        .collect()
}

fn polyphase_merge<T: Float>(phases: &[&[T]], h: usize, w: usize, f: usize) -> Vec<T> {
    let full_w = w * f;
    let mut out = vec![T::zero(); h * w * f * f];
    for (phase, p) in phases.iter().enumerate() {
        let (py, px) = (phase / f, phase % f);
        for y in 0..h {
            for x in 0..w {
                out[(y * f + py) * full_w + x * f + px] = p[y * w + x];
            }
        }
    }
    out
}

/// Orthonormal multi-level Haar analysis of every channel of `image`.
pub fn dwt2<T: Float>(image: &ImageGrid<T>, levels: usize) -> Result<WaveletSpectrum<T>> {
    let factor = check_divisible(image.height(), image.width(), levels)?;
    let layout = BandLayout::new(levels, image.channels())?;
    let (bh, bw) = (image.height() / factor, image.width() / factor);
    let planes = image.to_planes();
    let mut bands = Planes::zeros(layout.total_bands(), bh, bw);

    for ch in 0..image.channels() {
        let mut cur = planes.plane(ch).to_vec();
        let (mut h, mut w) = (image.height(), image.width());
        for level in 1..=levels {
            let [ll, lh, hl, hh] = haar_analyze(&cur, h, w);
            h /= 2;
            w /= 2;
            let f = 1 << (levels - level);
            for (subband, data) in [(Subband::LH, lh), (Subband::HL, hl), (Subband::HH, hh)] {
                let offset = layout.detail_offset(level, subband, ch);
                for (k, part) in polyphase_split(&data, bh, bw, f).into_iter().enumerate() {
                    bands.plane_mut(offset + k).copy_from_slice(&part);
                }
            }
            cur = ll;
        }
        bands.plane_mut(ch).copy_from_slice(&cur);
    }

    WaveletSpectrum::new(layout, bands, T::one())
}

/// Exact inverse of [`dwt2`]. The spectrum's `scale_applied` is divided out first.
pub fn idwt2<T: Float>(spectrum: &WaveletSpectrum<T>) -> Result<ImageGrid<T>> {
    let layout = spectrum.layout();
    if spectrum.band_count() != layout.total_bands() {
        return Err(Error::LayoutMismatch(format!(
            "{} bands for a layout of {}",
            spectrum.band_count(),
            layout.total_bands()
        )));
    }
    let levels = layout.levels();
    let (bh, bw) = (spectrum.bands_height(), spectrum.bands_width());
    let channels = layout.source_channels();
    let unscale = T::one() / spectrum.scale_applied();
    let factor = 1 << levels;
    let mut planes = Planes::zeros(channels, bh * factor, bw * factor);

    for ch in 0..channels {
        let mut cur = spectrum.band(ch).to_vec();
        let (mut h, mut w) = (bh, bw);
        for level in (1..=levels).rev() {
            let f = 1 << (levels - level);
            let mut details: Vec<Vec<T>> = Vec::with_capacity(3);
            for subband in [Subband::LH, Subband::HL, Subband::HH] {
                let offset = layout.detail_offset(level, subband, ch);
                let parts: Vec<&[T]> = (0..f * f).map(|k| spectrum.band(offset + k)).collect();
                details.push(polyphase_merge(&parts, bh, bw, f));
            }
            cur = haar_synthesize([&cur, &details[0], &details[1], &details[2]], h, w);
            h *= 2;
            w *= 2;
        }
        planes
            .plane_mut(ch)
            .iter_mut()
            .zip(cur)
            .for_each(|(o, v)| *o = v * unscale);
    }

    Ok(ImageGrid::from_planes(&planes, (-T::one(), T::one())))
}

/// Splits off the first `n_low` bands.
pub fn split_spectrum<T: Float>(spectrum: &WaveletSpectrum<T>, n_low: usize) -> Result<SpectrumSplit<T>> {
    let total = spectrum.band_count();
    if n_low == 0 || n_low > total {
        return Err(Error::InvalidArgument(format!(
            "n_low = {n_low} outside [1, {total}]"
        )));
    }
    Ok(SpectrumSplit {
        layout: spectrum.layout().clone(),
        scale_applied: spectrum.scale_applied(),
        low: spectrum.bands().slice_channels(0..n_low),
        high: spectrum.bands().slice_channels(n_low..total),
    })
}

/// Reassembles a split. An empty high part is allowed when `low` holds every band.
pub fn merge_spectrum<T: Float>(split: &SpectrumSplit<T>) -> Result<WaveletSpectrum<T>> {
    let total = split.layout.total_bands();
    if split.low.channels() + split.high.channels() != total {
        return Err(Error::ShapeMismatch(format!(
            "{} low + {} high bands for a layout of {total}",
            split.low.channels(),
            split.high.channels()
        )));
    }
    let bands = if split.high.channels() == 0 {
        split.low.clone()
    } else {
        Planes::concat(&[&split.low, &split.high])?
    };
    WaveletSpectrum::new(split.layout.clone(), bands, split.scale_applied)
}

/// Multiplies every coefficient by `gamma` and records the factor.
pub fn apply_scale<T: Float>(spectrum: &WaveletSpectrum<T>, gamma: T) -> Result<WaveletSpectrum<T>> {
    if gamma == T::zero() || !gamma.is_finite() {
        return Err(Error::InvalidArgument("scale must be finite and non-zero".into()));
    }
    Ok(WaveletSpectrum {
        layout: spectrum.layout.clone(),
        bands: spectrum.bands.map(|v| v * gamma),
        scale_applied: spectrum.scale_applied * gamma,
    })
}

/// The diffusion-domain scale `2^-levels`, which cancels the DC gain of the transform.
pub fn default_gamma(levels: usize) -> f64 {
    (0.5f64).powi(levels as i32)
}

/// Reflect-pads (mirror without repeating the edge) so both dims become multiples of `2^levels`.
pub fn reflect_pad<T: Float>(image: &ImageGrid<T>, levels: usize) -> ImageGrid<T> {
    reflect_pad_to(image, 1 << levels)
}

/// Reflect-pads both dims up to a multiple of `f`.
pub fn reflect_pad_to<T: Float>(image: &ImageGrid<T>, f: usize) -> ImageGrid<T> {
    let ph = image.height().div_ceil(f) * f;
    let pw = image.width().div_ceil(f) * f;
    if ph == image.height() && pw == image.width() {
        return image.clone();
    }
    let reflect = |i: usize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i % period;
        if m < n {
            m
        } else {
            period - m
        }
    };
    ImageGrid::from_fn(ph, pw, image.channels(), image.range(), |y, x, c| {
        image.get(reflect(y, image.height()), reflect(x, image.width()), c)
    })
}

/// Crops the top-left `height × width` region.
pub fn crop<T: Float>(image: &ImageGrid<T>, height: usize, width: usize) -> ImageGrid<T> {
    ImageGrid::from_fn(height, width, image.channels(), image.range(), |y, x, c| {
        image.get(y, x, c)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(h, w, c, (-1.0, 1.0), |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rgb_64_two_levels_gives_48_bands_of_16() {
        let s = dwt2(&random_image(64, 64, 3, 1), 2).unwrap();
        assert_eq!(s.band_count(), 48);
        assert_eq!((s.bands_height(), s.bands_width()), (16, 16));
        assert_eq!(s.scale_applied(), 1.0);
    }

    #[test]
    fn constant_image_one_level() {
        let img = ImageGrid::from_fn(8, 8, 1, (0.0, 1.0), |_, _, _| 0.3);
        let s = dwt2(&img, 1).unwrap();
        assert!(s.band(0).iter().all(|&v| (v - 0.6).abs() < 1e-15));
        for b in 1..4 {
            assert!(s.band(b).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn two_by_two_parseval_split() {
        let img = ImageGrid::new(2, 2, 1, vec![1.0, 3.0, 5.0, 7.0], (0.0, 8.0)).unwrap();
        let s = dwt2(&img, 1).unwrap();
        assert_eq!(s.band(0), &[8.0]);
        let detail: f64 = (1..4).map(|b| s.band(b)[0].powi(2)).sum();
        assert_eq!(detail, 20.0);
        // LH is the horizontal difference, HL the vertical one
        assert_eq!(s.band(1)[0], -2.0);
        assert_eq!(s.band(2)[0], -4.0);
        assert_eq!(s.band(3)[0], 0.0);
    }

    #[test]
    fn rejects_non_divisible_dims_naming_the_dimension() {
        let img = random_image(12, 16, 3, 2);
        match dwt2(&img, 3) {
            Err(Error::NotDivisible { dimension, size, factor }) => {
                assert_eq!((dimension, size, factor), ("height", 12, 8));
            }
            other => panic!("unexpected {other:?}"),
        }
        let img = random_image(16, 10, 1, 2);
        let err = dwt2(&img, 2).unwrap_err();
        assert!(err.to_string().contains("width"));
    }

    #[test]
    fn round_trip_double_precision() {
        let x = random_image(64, 64, 3, 3);
        let back = idwt2(&dwt2(&x, 2).unwrap()).unwrap();
        let err = x
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn zero_spectrum_inverts_to_zero_image() {
        let layout = BandLayout::new(2, 3).unwrap();
        let s = WaveletSpectrum::new(layout, Planes::<f64>::zeros(48, 4, 4), 1.0).unwrap();
        let img = idwt2(&s).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (16, 16, 3));
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deepest_dc_inverts_to_constant() {
        let layout = BandLayout::new(2, 1).unwrap();
        let mut bands = Planes::<f64>::zeros(16, 2, 2);
        bands.plane_mut(0).iter_mut().for_each(|v| *v = 4.0 * 0.7);
        let img = idwt2(&WaveletSpectrum::new(layout, bands, 1.0).unwrap()).unwrap();
        assert!(img.data().iter().all(|&v| (v - 0.7).abs() < 1e-14));
    }

    #[test]
    fn layout_first_bands_are_deepest_ll_per_channel() {
        let layout = BandLayout::new(2, 3).unwrap();
        assert_eq!(layout.total_bands(), 48);
        for (c, b) in layout.ordering()[..3].iter().enumerate() {
            assert_eq!((b.level, b.subband, b.channel), (2, Subband::LL, c));
        }
        let ll = layout.ordering().iter().filter(|b| b.subband == Subband::LL).count();
        assert_eq!(ll, 3);
        assert!(layout
            .ordering()
            .iter()
            .filter(|b| b.subband == Subband::LL)
            .all(|b| b.level == 2));
        for levels in 1..=3 {
            for c in 1..=3 {
                let l = BandLayout::new(levels, c).unwrap();
                assert_eq!(l.total_bands(), c * 4usize.pow(levels as u32));
                for (i, b) in l.ordering().iter().enumerate() {
                    assert_eq!(l.index_of(b.level, b.subband, b.channel, b.phase), Some(i));
                }
            }
        }
    }

    #[test]
    fn split_and_merge() {
        let s = dwt2(&random_image(64, 64, 3, 4), 2).unwrap();
        let split = split_spectrum(&s, 3).unwrap();
        assert_eq!((split.low.channels(), split.high.channels()), (3, 45));
        assert_eq!(merge_spectrum(&split).unwrap(), s);
        let all = split_spectrum(&s, 48).unwrap();
        assert_eq!(all.high.channels(), 0);
        assert_eq!(merge_spectrum(&all).unwrap(), s);
        assert!(split_spectrum(&s, 0).is_err());
        assert!(split_spectrum(&s, 49).is_err());
    }

    #[test]
    fn merge_rejects_inconsistent_parts() {
        let s = dwt2(&random_image(16, 16, 3, 5), 2).unwrap();
        let mut split = split_spectrum(&s, 3).unwrap();
        split.high = split.high.slice_channels(0..40);
        assert!(matches!(merge_spectrum(&split), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn dropping_high_bands_keeps_low_energy() {
        let x = random_image(32, 32, 3, 6);
        let s = dwt2(&x, 2).unwrap();
        let mut split = split_spectrum(&s, 3).unwrap();
        let low_energy = split.low.sum_squares();
        split.high = split.high.map(|_| 0.0);
        let smooth = idwt2(&merge_spectrum(&split).unwrap()).unwrap();
        assert!((smooth.energy() - low_energy).abs() < 1e-10 * low_energy);
    }

    #[test]
    fn scale_identity_dc_and_inverse() {
        let x = random_image(16, 16, 3, 7);
        let s = dwt2(&x, 2).unwrap();
        assert_eq!(apply_scale(&s, 1.0).unwrap(), s);

        let c = 0.42;
        let constant = ImageGrid::from_fn(16, 16, 3, (0.0, 1.0), |_, _, _| c);
        let scaled = apply_scale(&dwt2(&constant, 2).unwrap(), 0.25).unwrap();
        for ch in 0..3 {
            assert!(scaled.band(ch).iter().all(|&v| (v - c).abs() < 1e-15));
        }

        let back = apply_scale(&apply_scale(&s, 0.25).unwrap(), 4.0).unwrap();
        for (a, b) in back.bands().data().iter().zip(s.bands().data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(back.scale_applied(), 1.0);
        assert!(apply_scale(&s, 0.0).is_err());
    }

    #[test]
    fn idwt_undoes_scale() {
        let x = random_image(16, 16, 3, 8);
        let s = apply_scale(&dwt2(&x, 2).unwrap(), default_gamma(2)).unwrap();
        let back = idwt2(&s).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_pad_then_crop() {
        let x = random_image(13, 10, 3, 9);
        let padded = reflect_pad(&x, 2);
        assert_eq!((padded.height(), padded.width()), (16, 12));
        assert_eq!(padded.get(13, 0, 0), x.get(11, 0, 0));
        assert_eq!(padded.get(0, 10, 1), x.get(0, 8, 1));
        let back = idwt2(&dwt2(&padded, 2).unwrap()).unwrap();
        let cropped = crop(&back, 13, 10);
        for (a, b) in cropped.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn image_grid_rejects_bad_data() {
        assert!(ImageGrid::new(2, 2, 1, vec![0.0; 3], (0.0, 1.0)).is_err());
        assert!(matches!(
            ImageGrid::new(1, 1, 1, vec![f64::NAN], (0.0, 1.0)),
            Err(Error::NonFinite(_))
        ));
    }
}
