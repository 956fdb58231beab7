//! Nonsubsampled (a-trous) pyramid.

use super::filters::{FilterBank, Kernel};
use crate::error::{Error, Result};
use crate::image::Image;

#[inline]
pub(crate) fn level_dilation(level: usize) -> i32 {
    1 << level
}

fn check_support(image: &Image, kernel: &Kernel, level: usize) -> Result<()> {
    let (sh, sw) = kernel.span();
    if sh > image.height() || sw > image.width() {
        return Err(Error::Dimension(format!(
            "level {} kernel spans {sh}x{sw}, image is only {}x{}",
            level + 1,
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Multiscale split into one lowpass and `levels` bandpass images, finest
/// first. Level `j` (from 1) uses the filters dilated by `2^(j-1)`.
pub fn nsp_analyze(image: &Image, levels: usize, bank: &FilterBank) -> Result<(Image, Vec<Image>)> {
    if levels == 0 {
        return Err(Error::Parameter("pyramid needs at least one level".into()));
    }
    let mut bands = Vec::with_capacity(levels);
    let mut approx = image.clone();
    for j in 0..levels {
        let m = level_dilation(j);
        let lo = bank.pyramid_lowpass_analysis.dilate(m);
        let hi = bank.pyramid_highpass_analysis.dilate(m);
        check_support(&approx, &lo, j)?;
        check_support(&approx, &hi, j)?;
        bands.push(hi.apply(&approx));
        approx = lo.apply(&approx);
    }
    Ok((approx, bands))
}

/// Inverse of [`nsp_analyze`].
pub fn nsp_synthesize(lowpass: &Image, bandpass: &[Image], bank: &FilterBank) -> Result<Image> {
    if bandpass.is_empty() {
        return Err(Error::Parameter("pyramid needs at least one level".into()));
    }
    for b in bandpass {
        lowpass.same_dims(b)?;
    }
    let mut approx = lowpass.clone();
    for (j, band) in bandpass.iter().enumerate().rev() {
        let m = level_dilation(j);
        let mut next = bank.pyramid_lowpass_synthesis.dilate(m).apply(&approx);
        bank.pyramid_highpass_synthesis
            .dilate(m)
            .apply_into(band, &mut next, true);
        approx = next;
    }
    Ok(approx)
}
