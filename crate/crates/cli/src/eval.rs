use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use texweave::filterbank::DEFAULT_SUPPORT;
use texweave::texton::{
    gram_distance, histogram_distance, learn_textons, texton_histogram, TextonDictionary,
    DEFAULT_TEXTONS,
};
use texweave::{FilterBank, Tensor};

use crate::{read_image, write_csv, CliResult};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Distance between per-layer Gram matrices of filter responses.
    Gram,
    /// Chi-squared distance between texton histograms.
    Histogram,
}

impl Metric {
    fn name(self) -> &'static str {
        match self {
            Metric::Gram => "gram",
            Metric::Histogram => "histogram",
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub original: PathBuf,
    /// Images compared against the original.
    #[arg(long, num_args = 1.., required = true)]
    pub generated: Vec<PathBuf>,
    /// Metric to compute; both when absent.
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Texton dictionary; learned from the original when absent.
    #[arg(long)]
    pub textons: Option<PathBuf>,
    /// Dictionary size when learning textons.
    #[arg(long, default_value_t = DEFAULT_TEXTONS)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Filter support for the Gram metric and for learned textons.
    #[arg(long, default_value_t = DEFAULT_SUPPORT)]
    pub support: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Central `h×w` window of an `H×W×C` image.
pub(crate) fn center_crop(image: &Tensor, h: usize, w: usize) -> Tensor {
    let &[ih, iw, c] = image.shape() else {
        unreachable!("images are H×W×C")
    };
    let (r0, c0) = ((ih - h) / 2, (iw - w) / 2);
    let mut data = Vec::with_capacity(h * w * c);
    for y in r0..r0 + h {
        data.extend_from_slice(&image.data()[(y * iw + c0) * c..(y * iw + c0 + w) * c]);
    }
    Tensor::new([h, w, c], data).expect("crop fits")
}

/// Compares each generated image with the original; writes `eval.csv`
/// with columns `image_a,image_b,metric,value`. The Gram metric compares
/// central crops of the common size when the images differ in size.
pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let metrics = match args.metric {
        Some(m) => vec![m],
        None => vec![Metric::Gram, Metric::Histogram],
    };
    let original = read_image(&args.original)?;
    let generated = args
        .generated
        .iter()
        .map(|p| read_image(p))
        .collect::<CliResult<Vec<_>>>()?;

    let gram_bank = FilterBank::leung_malik(args.support)?;
    let textons = if metrics.contains(&Metric::Histogram) {
        let dict = match &args.textons {
            Some(path) => TextonDictionary::load(path)?,
            None => {
                let dict = learn_textons(
                    std::slice::from_ref(&original),
                    &gram_bank,
                    args.k,
                    args.seed,
                )?;
                dict.save(&args.out.join("textons.bin"))?;
                dict
            }
        };
        let bank = FilterBank::leung_malik(dict.support())?;
        let reference = texton_histogram(&original, &dict, &bank)?;
        Some((dict, bank, reference))
    } else {
        None
    };

    let name_a = args.original.display().to_string();
    let mut rows = Vec::new();
    for (path, image) in args.generated.iter().zip(&generated) {
        for &m in &metrics {
            let value = match m {
                Metric::Gram => {
                    let h = original.shape()[0].min(image.shape()[0]);
                    let w = original.shape()[1].min(image.shape()[1]);
                    gram_distance(
                        &center_crop(&original, h, w),
                        &center_crop(image, h, w),
                        &gram_bank,
                    )?
                }
                Metric::Histogram => {
                    let (dict, bank, reference) =
                        textons.as_ref().expect("histogram metric has textons");
                    histogram_distance(reference, &texton_histogram(image, dict, bank)?)?
                }
            };
            rows.push(format!("{name_a},{},{},{value}", path.display(), m.name()));
        }
    }
    write_csv(
        &args.out.join("eval.csv"),
        "image_a,image_b,metric,value",
        &rows,
    )?;
    eprintln!(
        "wrote {} distances to {}",
        rows.len(),
        args.out.join("eval.csv").display()
    );
    Ok(())
}
