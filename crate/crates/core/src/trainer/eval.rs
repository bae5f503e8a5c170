use std::fmt::Write as _;

use crate::error::Result;
use crate::renderer::{render_view_weighted, BlendMode, MpiField};
use crate::scene::{average_score, psnr, ssim, Image, View};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Two-term geometric mean; lower is better.
    pub average: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub blend: BlendMode,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_average(&self) -> f64 {
        average_score(self.mean_psnr(), self.mean_ssim())
    }

    /// Comma-separated table: one row per view, then the mean.
    pub fn csv(&self) -> String {
        let mut s = String::from("view,psnr,ssim,average_no_lpips\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", r.view, r.psnr, r.ssim, r.average);
        }
        let _ = writeln!(
            s,
            "mean,{:.6},{:.6},{:.6}",
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_average()
        );
        s
    }
}

/// Renders each view through the blended MPIs, rounds to 8 bits as a saved
/// image would be, and scores it against the view's image.
pub fn evaluate(mpis: &[MpiField], views: &[View], blend: BlendMode) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(views.len());
    for v in views {
        let (w, h) = (v.image.width, v.image.height);
        let render = render_view_weighted(mpis, &v.camera, w, h, blend)?;
        let img = Image::new(w, h, render.color).quantized();
        let p = psnr(&img, &v.image)?;
        let s = ssim(&img, &v.image)?;
        rows.push(EvalRow {
            view: v.name.clone(),
            psnr: p,
            ssim: s,
            average: average_score(p, s),
        });
    }
    Ok(EvalReport { rows, blend })
}
