//! SVG audit overlay: ROI outlines over a downsampled copy of the image.

use std::io::Cursor;

use anyhow::{Context, Result};
use base64::Engine;
use kneetex::{Image16, Point, RoiName};

pub struct Outline {
    pub name: RoiName,
    pub corners: [Point; 4],
    pub out_of_bone: bool,
}

/// Box-averages `image` by an integer factor so it is at most `max_width`
/// wide and stretches it to 8 bits.
fn thumbnail(image: &Image16, max_width: usize) -> (usize, image::GrayImage) {
    let factor = image.width().div_ceil(max_width.max(1)).max(1);
    let (w, h) = ((image.width() / factor).max(1), (image.height() / factor).max(1));
    let mut sums = vec![0.0f64; w * h];
    for y in 0..h * factor {
        for x in 0..w * factor {
            sums[(y / factor) * w + x / factor] += f64::from(image.get(x.min(image.width() - 1), y.min(image.height() - 1)));
        }
    }
    let lo = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels = sums.iter().map(|s| ((s - lo) / span * 255.0).round() as u8).collect();
    (factor, image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer matches size"))
}

pub fn svg(image: &Image16, outlines: &[Outline], max_width: usize) -> Result<String> {
    let (factor, thumb) = thumbnail(image, max_width);
    let mut png = Vec::new();
    thumb
        .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
        .context("encoding overlay thumbnail")?;
    let data = base64::engine::general_purpose::STANDARD.encode(&png);
    let (w, h) = (thumb.width(), thumb.height());
    let k = factor as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <image width=\"{w}\" height=\"{h}\" href=\"data:image/png;base64,{data}\"/>\n"
    );
    for o in outlines {
        let points: Vec<String> = o.corners.iter().map(|p| format!("{:.2},{:.2}", p.x / k, p.y / k)).collect();
        let colour = match o.name {
            RoiName::F0 | RoiName::F1 => "#ff4040",
            _ => "#ffd000",
        };
        let dash = if o.out_of_bone { " stroke-dasharray=\"4 3\"" } else { "" };
        s.push_str(&format!(
            "<polygon points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"{dash}/>\n",
            points.join(" ")
        ));
        let c = o.corners[0];
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{colour}\" font-size=\"12\" font-family=\"sans-serif\">{}</text>\n",
            c.x / k + 2.0,
            c.y / k + 12.0,
            o.name
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
