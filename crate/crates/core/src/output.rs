//! PNG emission for slices, panels and simple plots.
//!
//! Plots are presentation only; every plotted number is also written to CSV
//! by the stage that produced it.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::grid::Grid2;
use crate::volume::Window;
use crate::Result;

/// HU offset used by the 16-bit PNG encoding: `stored = round(HU + 32768)`.
pub const PNG16_HU_OFFSET: f32 = 32768.0;

pub fn windowed_gray(pixels: &Grid2<f32>, window: Window) -> GrayImage {
    let (rows, cols) = pixels.shape();
    GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = window.normalize(*pixels.get(y as usize, x as usize));
        Luma([((v + 1.0) * 127.5).round() as u8])
    })
}

pub fn write_windowed_png(path: &Path, pixels: &Grid2<f32>, window: Window) -> Result<()> {
    windowed_gray(pixels, window).save(path)?;
    Ok(())
}

/// Lossless 16-bit grayscale PNG of HU values.
pub fn write_hu_png16(path: &Path, pixels: &Grid2<f32>) -> Result<()> {
    let (rows, cols) = pixels.shape();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(cols as u32, rows as u32, |x, y| {
            let v = *pixels.get(y as usize, x as usize) as f64 + PNG16_HU_OFFSET as f64;
            Luma([v.round().clamp(0.0, u16::MAX as f64) as u16])
        });
    img.save(path)?;
    Ok(())
}

pub fn read_hu_png16(path: &Path) -> Result<Grid2<f32>> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    Ok(Grid2::from_fn(h as usize, w as usize, |r, c| {
        img.get_pixel(c as u32, r as u32)[0] as f32 - PNG16_HU_OFFSET
    }))
}

/// Panels placed left to right with a 2-pixel separator.
pub fn write_panel_png(path: &Path, panels: &[&Grid2<f32>], window: Window) -> Result<()> {
    let rows = panels.iter().map(|p| p.rows()).max().unwrap_or(0);
    let gap = 2;
    let width: usize = panels.iter().map(|p| p.cols()).sum::<usize>() + gap * panels.len().saturating_sub(1);
    let mut out = GrayImage::new(width as u32, rows as u32);
    let mut x0 = 0;
    for p in panels {
        let g = windowed_gray(p, window);
        image::imageops::replace(&mut out, &g, x0 as i64, 0);
        x0 += p.cols() + gap;
    }
    out.save(path)?;
    Ok(())
}

const PALETTE: [[u8; 3]; 6] = [
    [230, 180, 30],
    [200, 40, 40],
    [40, 80, 200],
    [30, 150, 60],
    [150, 60, 160],
    [90, 90, 90],
];

/// Overlaid bar histograms, one series per entry as `(bin_start, count)`.
pub fn write_histogram_png(path: &Path, series: &[Vec<(f64, usize)>], bin_width: f64) -> Result<()> {
    let (w, h) = (640u32, 360u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let all = series.iter().flatten();
    let lo = all.clone().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let hi = all.clone().map(|b| b.0 + bin_width).fold(f64::NEG_INFINITY, f64::max);
    let peak = all.map(|b| b.1).max().unwrap_or(0);
    if peak == 0 || !lo.is_finite() {
        img.save(path)?;
        return Ok(());
    }
    let margin = 20.0;
    let sx = (w as f64 - 2.0 * margin) / (hi - lo);
    let sy = (h as f64 - 2.0 * margin) / peak as f64;
    for (k, bins) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for &(start, count) in bins {
            let x0 = (margin + (start - lo) * sx) as u32;
            let x1 = ((margin + (start + bin_width - lo) * sx) as u32).max(x0 + 1);
            let y0 = (h as f64 - margin - count as f64 * sy) as u32;
            for x in x0..x1.min(w) {
                for y in y0..(h - margin as u32) {
                    let p = img.get_pixel_mut(x, y);
                    // alpha-blend so overlapping distributions stay visible
                    for ch in 0..3 {
                        p[ch] = ((p[ch] as u16 + color[ch] as u16) / 2) as u8;
                    }
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

/// Polyline plot of several series against their sample index.
pub fn write_line_plot_png(path: &Path, series: &[Vec<f64>]) -> Result<()> {
    let (w, h) = (800u32, 400u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let finite = || series.iter().flatten().copied().filter(|v| v.is_finite());
    let lo = finite().fold(f64::INFINITY, f64::min);
    let hi = finite().fold(f64::NEG_INFINITY, f64::max);
    let n = series.iter().map(|s| s.len()).max().unwrap_or(0);
    if n < 2 || !lo.is_finite() {
        img.save(path)?;
        return Ok(());
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let margin = 10.0;
    let to_px = |i: usize, v: f64| {
        let x = margin + i as f64 / (n - 1) as f64 * (w as f64 - 2.0 * margin);
        let y = h as f64 - margin - (v - lo) / span * (h as f64 - 2.0 * margin);
        (x, y)
    };
    for (k, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        for i in 1..s.len() {
            let (x0, y0) = to_px(i - 1, s[i - 1]);
            let (x1, y1) = to_px(i, s[i]);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for t in 0..=steps {
                let f = t as f64 / steps as f64;
                let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
                if x >= 0.0 && y >= 0.0 && (x as u32) < w && (y as u32) < h {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png16_round_trips_integer_hu() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let g = Grid2::from_fn(5, 7, |r, c| (r as f32 * 100.0) - 1024.0 + c as f32);
        write_hu_png16(&path, &g).unwrap();
        assert_eq!(read_hu_png16(&path).unwrap(), g);
    }
}
