//! Trained-model files: network weights plus the preprocessing needed to
//! evaluate raw data with them.
//!
//! Plain text, line oriented:
//!
//! ```text
//! mwh-model 1
//! classes <K>
//! <class name 0>
//! ...
//! <class name K-1>
//! label_column <name | index | last>
//! header <true | false>
//! image_shape <- | channels height width>
//! scaler <- | width>
//! <width mins, space separated>      (only when a scaler is present)
//! <width maxes, space separated>
//! layers <input> <hidden...> <classes>
//! W 0 <rows> <cols>
//! <one line per row>
//! b 0 1 <cols>
//! <one line>
//! ...
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::{CsvOptions, LabelColumn, MinMaxScaler};
use crate::error::{Error, Result};
use crate::model::MlpState;

const MAGIC: &str = "mwh-model 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: MlpState,
    pub class_names: Vec<String>,
    pub csv: CsvOptions,
    pub image_shape: Option<[usize; 3]>,
    pub scaler: Option<MinMaxScaler>,
}

fn floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "classes {}", self.class_names.len())?;
        for name in &self.class_names {
            writeln!(out, "{name}")?;
        }
        let label = match &self.csv.label_column {
            LabelColumn::Name(n) => n.clone(),
            LabelColumn::Index(i) => i.to_string(),
            LabelColumn::Last => "last".into(),
        };
        writeln!(out, "label_column {label}")?;
        writeln!(out, "header {}", self.csv.has_header)?;
        match self.image_shape {
            Some([c, h, w]) => writeln!(out, "image_shape {c} {h} {w}")?,
            None => writeln!(out, "image_shape -")?,
        }
        match &self.scaler {
            Some(s) => {
                writeln!(out, "scaler {}", s.min.len())?;
                writeln!(out, "{}", floats(&s.min))?;
                writeln!(out, "{}", floats(&s.max))?;
            }
            None => writeln!(out, "scaler -")?,
        }
        self.state.write_to(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file)).map_err(|detail| Error::Format {
            path: path.into(),
            detail,
        })
    }

    fn read<B: BufRead>(reader: B) -> std::result::Result<Self, String> {
        let mut lines = reader.lines();
        let mut next = || -> std::result::Result<String, String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(e.to_string()),
                None => Err("unexpected end of file".into()),
            }
        };
        if next()?.trim() != MAGIC {
            return Err("not a model file".into());
        }
        let field = |line: String, key: &str| -> std::result::Result<String, String> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| format!("expected `{key}`, got {line:?}"))
        };
        let k: usize = field(next()?, "classes")?
            .parse()
            .map_err(|_| "bad class count".to_string())?;
        let class_names = (0..k)
            .map(|_| next())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let label_column = LabelColumn::parse(&field(next()?, "label_column")?);
        let has_header = field(next()?, "header")? == "true";
        let shape = field(next()?, "image_shape")?;
        let image_shape = if shape == "-" {
            None
        } else {
            let d: Vec<usize> = shape
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| format!("bad image shape {shape:?}")))
                .collect::<std::result::Result<_, _>>()?;
            match d.as_slice() {
                [c, h, w] => Some([*c, *h, *w]),
                _ => return Err(format!("bad image shape {shape:?}")),
            }
        };
        let scaler_line = field(next()?, "scaler")?;
        let scaler = if scaler_line == "-" {
            None
        } else {
            let width: usize = scaler_line
                .parse()
                .map_err(|_| "bad scaler width".to_string())?;
            let mut row = || -> std::result::Result<Vec<f64>, String> {
                let v: Vec<f64> = next()?
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| format!("bad scaler value {t:?}")))
                    .collect::<std::result::Result<_, _>>()?;
                if v.len() != width {
                    return Err("scaler width mismatch".into());
                }
                Ok(v)
            };
            let min = row()?;
            let max = row()?;
            Some(MinMaxScaler { min, max })
        };
        let state = MlpState::read_from(&mut lines)?;
        if state.spec().classes() != k {
            return Err("class count does not match the output layer".into());
        }
        Ok(Checkpoint {
            state,
            class_names,
            csv: CsvOptions {
                has_header,
                label_column,
            },
            image_shape,
            scaler,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MlpSpec;
    use crate::rng::RngStream;

    #[test]
    fn save_load_round_trip() {
        let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
        let ckpt = Checkpoint {
            state: MlpState::init(&spec, &mut RngStream::new(1)),
            class_names: vec!["Iris setosa".into(), "other".into()],
            csv: CsvOptions {
                has_header: true,
                label_column: LabelColumn::Name("species".into()),
            },
            image_shape: None,
            scaler: Some(MinMaxScaler {
                min: vec![0.1, -2.0, 1.0 / 3.0],
                max: vec![5.0, 2.0, 7.25],
            }),
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        ckpt.save(f.path()).unwrap();
        assert_eq!(Checkpoint::load(f.path()).unwrap(), ckpt);

        let img = Checkpoint {
            image_shape: Some([1, 2, 2]),
            scaler: None,
            state: MlpState::init(&MlpSpec::new(vec![4, 2]).unwrap(), &mut RngStream::new(2)),
            ..ckpt
        };
        img.save(f.path()).unwrap();
        assert_eq!(Checkpoint::load(f.path()).unwrap(), img);
    }

    #[test]
    fn rejects_garbage() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "hello\n").unwrap();
        assert!(matches!(
            Checkpoint::load(f.path()),
            Err(Error::Format { .. })
        ));
    }
}
